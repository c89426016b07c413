import numpy as np
import pytest

from hybridskip import Tensor, gradcheck
from hybridskip import checkpoint as C
from hybridskip import skips as S
from hybridskip import unet as U
from hybridskip.errors import (DimensionError, FormatError, ParameterError,
                               UsageError)

REDUCED = (8, 16, 32, 64, 128)


def small_cfg(**kw):
    kw.setdefault("channel_plan", REDUCED)
    kw.setdefault("sqex_ratio", 4)
    return U.UNetConfig(**kw)


class TestConfig:
    def test_plan_must_increase(self):
        with pytest.raises(ParameterError):
            U.UNetConfig(channel_plan=(32, 64, 64, 256, 512))

    def test_plan_must_have_five_levels(self):
        with pytest.raises(ParameterError):
            U.UNetConfig(channel_plan=(32, 64, 128, 256))

    def test_bad_skip(self):
        with pytest.raises(ParameterError):
            U.UNetConfig(skip="dense")

    def test_bad_activation(self):
        with pytest.raises(ParameterError):
            U.UNetConfig(activation="tanh")


class TestBuild:
    def test_same_seed_bit_identical(self):
        m1 = U.build_unet(small_cfg(skip="hybrid"), seed=3)
        m2 = U.build_unet(small_cfg(skip="hybrid"), seed=3)
        for (n1, t1), (n2, t2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_different_seed_differs(self):
        m1 = U.build_unet(small_cfg(), seed=3)
        m2 = U.build_unet(small_cfg(), seed=4)
        assert any(not np.array_equal(t1.data, t2.data)
                   for (_, t1), (_, t2) in zip(m1.named_parameters(),
                                               m2.named_parameters()))

    def test_hybrid_adds_1984_params_at_default_plan(self):
        vanilla = U.build_unet(U.UNetConfig(skip="vanilla"), seed=0)
        hybrid = U.build_unet(U.UNetConfig(skip="hybrid"), seed=0)
        assert U.parameter_count(hybrid) - U.parameter_count(vanilla) == 1984

    def test_backbone_identical_across_skip_kinds(self):
        base = dict(U.build_unet(small_cfg(skip="vanilla"), seed=11).named_parameters())
        for kind in ("hybrid", "conv", "attention", "sqex", "exfuse"):
            other = dict(U.build_unet(small_cfg(skip=kind), seed=11).named_parameters())
            for name, tensor in base.items():
                if name.startswith("skip"):
                    continue
                np.testing.assert_array_equal(
                    tensor.data, other[name].data, err_msg=name)

    def test_parameter_names_unique(self):
        model = U.build_unet(small_cfg(skip="residual"), seed=0)
        names = [n for n, _ in model.named_parameters()]
        assert len(names) == len(set(names))

    def test_vanilla_count_matches_independent_tally(self):
        plan = list(REDUCED)
        cin = 3
        expected = 0
        for f in plan:  # encoder double conv
            expected += (9 * cin * f + f) + (9 * f * f + f)
            cin = f
        expected += 2 * (9 * plan[-1] ** 2 + plan[-1])  # bottleneck
        prev = plan[-1]
        for f in reversed(plan):  # decoder proj + refine
            expected += (prev * f + f) + (9 * f * f + f)
            prev = f
        expected += plan[0] + 1  # head
        expected += sum(9 * (2 * f) * f + f for f in plan)  # fusion convs
        model = U.build_unet(small_cfg(), seed=0)
        assert U.parameter_count(model) == expected

    def test_exfuse_largest_overhead(self):
        plan = (32, 64, 128, 256, 512)
        deltas = {k: S.skip_extra_parameters(k, plan) for k in S.SKIP_KINDS}
        assert deltas["exfuse"] == max(deltas.values())
        reduced = list(REDUCED)
        instantiated = (
            U.parameter_count(U.build_unet(small_cfg(skip="exfuse"), 0))
            - U.parameter_count(U.build_unet(small_cfg(), 0)))
        assert instantiated == S.skip_extra_parameters("exfuse", reduced)


class TestForward:
    def test_shape_and_positivity(self, rng):
        model = U.build_unet(small_cfg(skip="hybrid"), seed=1)
        out = model.forward(Tensor(rng.standard_normal((3, 64, 64))))
        assert out.shape == (1, 64, 64)
        assert np.all(out.data > 0)
        assert np.all(np.isfinite(out.data))

    def test_forward_is_pure(self, rng):
        model = U.build_unet(small_cfg(skip="sqex"), seed=1)
        x = Tensor(rng.standard_normal((3, 32, 32)))
        np.testing.assert_array_equal(model.forward(x).data,
                                      model.forward(x).data)

    def test_bad_spatial_dims(self, rng):
        model = U.build_unet(small_cfg(), seed=1)
        with pytest.raises(DimensionError):
            model.forward(Tensor(rng.standard_normal((3, 48, 48))))

    def test_bad_channels(self, rng):
        model = U.build_unet(small_cfg(), seed=1)
        with pytest.raises(DimensionError):
            model.forward(Tensor(rng.standard_normal((1, 32, 32))))

    @pytest.mark.parametrize("kind", S.SKIP_KINDS)
    def test_every_skip_kind_runs(self, rng, kind):
        model = U.build_unet(small_cfg(skip=kind), seed=2)
        out = model.forward(Tensor(rng.standard_normal((3, 32, 32))))
        assert out.shape == (1, 32, 32)
        assert np.all(np.isfinite(out.data))

    def test_identity_transform_can_go_negative(self, rng):
        model = U.build_unet(small_cfg(output_transform="identity"), seed=5)
        out = model.forward(Tensor(rng.standard_normal((3, 32, 32))))
        assert out.shape == (1, 32, 32)


class TestEndToEndGradients:
    def test_gradcheck_through_whole_model(self, rng):
        from hybridskip import tensor as T
        model = U.build_unet(small_cfg(skip="hybrid"), seed=7)
        image = Tensor(rng.uniform(-1, 1, (3, 32, 32)))
        params = [t for _, t in model.named_parameters()]

        def f(img, *params):
            return T.mean_all(model.forward(img))

        err = gradcheck(f, [image] + params, 1e-5, max_coords=2,
                        rng=np.random.default_rng(0))
        assert err < 1e-4


class TestBlendingInspection:
    def test_values_in_unit_interval(self):
        model = U.build_unet(small_cfg(skip="hybrid"), seed=0)
        for row in U.inspect_blending_factors(model):
            assert np.all(row["eps"] > 0) and np.all(row["eps"] < 1)
            assert np.all(row["delta"] > 0) and np.all(row["delta"] < 1)

    def test_fresh_means_near_half_for_wide_levels(self):
        model = U.build_unet(U.UNetConfig(skip="hybrid"), seed=123)
        for row in U.inspect_blending_factors(model):
            if len(row["eps"]) >= 128:
                assert abs(row["eps_mean"] - 0.5) < 0.1
                assert abs(row["delta_mean"] - 0.5) < 0.1

    def test_wrong_kind_raises(self):
        model = U.build_unet(small_cfg(skip="vanilla"), seed=0)
        with pytest.raises(UsageError):
            U.inspect_blending_factors(model)

    def test_fixed_mode_reports_constants(self):
        model = U.build_unet(small_cfg(skip="hybrid",
                                       blend_mode="fixed:0.25,0.75"), seed=0)
        rows = U.inspect_blending_factors(model)
        assert all(row["eps_mean"] == 0.25 for row in rows)
        assert all(row["delta_mean"] == 0.75 for row in rows)


class TestCheckpoint:
    def test_tensor_roundtrip(self, tmp_path, rng):
        named = {
            "a.weight": rng.standard_normal((2, 3, 3, 3)),
            "b.bias": rng.standard_normal(4),
            "scalar": np.array(3.5),
        }
        path = tmp_path / "t.hskp"
        C.save_tensors(path, named)
        back = C.load_tensors(path)
        assert list(back) == list(named)
        for k in named:
            np.testing.assert_array_equal(back[k], np.asarray(named[k], float))

    def test_model_roundtrip_rebuilds_config(self, tmp_path, rng):
        cfg = small_cfg(skip="hybrid", activation="relu", filter_size=5)
        model = U.build_unet(cfg, seed=9)
        path = tmp_path / "m.hskp"
        C.save_model(path, model, extra={"train.epoch": np.array([4.0])})
        loaded, extra = C.load_model(path)
        assert loaded.cfg == cfg
        for (n1, t1), (n2, t2) in zip(model.named_parameters(),
                                      loaded.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)
        assert float(extra["train.epoch"][0]) == 4.0

    def test_save_is_deterministic(self, tmp_path):
        model = U.build_unet(small_cfg(skip="blend"), seed=2)
        p1, p2 = tmp_path / "a.hskp", tmp_path / "b.hskp"
        C.save_model(p1, model)
        C.save_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_same_forward(self, tmp_path, rng):
        model = U.build_unet(small_cfg(skip="exfuse"), seed=3)
        path = tmp_path / "m.hskp"
        C.save_model(path, model)
        loaded, _ = C.load_model(path)
        x = Tensor(rng.standard_normal((3, 32, 32)))
        np.testing.assert_array_equal(model.forward(x).data,
                                      loaded.forward(x).data)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hskp"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError):
            C.load_tensors(path)

    def test_truncated_file(self, tmp_path, rng):
        path = tmp_path / "t.hskp"
        C.save_tensors(path, {"x": rng.standard_normal(8)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-9])
        with pytest.raises(FormatError):
            C.load_tensors(path)

    def test_wrong_version(self, tmp_path):
        import struct
        path = tmp_path / "v.hskp"
        path.write_bytes(b"HSKP" + struct.pack("<I", 77) + struct.pack("<I", 0))
        with pytest.raises(FormatError):
            C.load_tensors(path)

    def test_missing_parameter(self, tmp_path):
        model = U.build_unet(small_cfg(), seed=0)
        path = tmp_path / "m.hskp"
        C.save_model(path, model)
        stored = C.load_tensors(path)
        del stored["head.weight"]
        C.save_tensors(path, stored)
        with pytest.raises(FormatError):
            C.load_model(path)
