"""Fixed evaluation rows for the seven skip variants, used as inputs for
indicator and radar arithmetic tests. Values are frozen; percentages stay
percentages and F1 columns are converted to fractions by report_for."""

COLUMNS = ("rmse", "rmsle", "absrel", "sqrel",
           "delta_125", "delta_125sq", "delta_125cu", "delta_105", "delta_110",
           "dbe_acc", "dbe_comp", "f1_025_pct", "f1_050_pct", "f1_100_pct",
           "alpha_1125", "alpha_225", "alpha_30", "rmse_deg")

ROWS = {
    "vanilla":   (0.4055, 0.1158, 0.1083, 0.0649, 89.43, 97.34, 99.09, 36.67,
                  62.12, 1.279, 4.110, 48.89, 42.14, 32.33, 63.02, 77.94,
                  83.12, 15.95),
    "conv":      (0.3974, 0.0670, 0.1095, 0.0663, 89.43, 97.46, 99.09, 38.53,
                  61.79, 1.226, 4.101, 51.39, 45.92, 37.58, 62.88, 78.10,
                  83.35, 15.83),
    "attention": (0.3974, 0.0664, 0.1074, 0.0636, 89.67, 97.61, 99.19, 35.90,
                  61.69, 1.321, 3.891, 51.34, 45.66, 38.05, 62.60, 77.61,
                  82.93, 15.99),
    "sqex":      (0.3993, 0.0672, 0.1097, 0.0672, 89.57, 97.51, 99.09, 36.11,
                  61.65, 1.344, 3.931, 48.83, 41.12, 32.42, 66.22, 79.79,
                  84.54, 14.76),
    "exfuse":    (0.3913, 0.0865, 0.1043, 0.0688, 90.42, 97.60, 99.07, 40.34,
                  64.77, 1.528, 4.865, 51.60, 46.20, 37.20, 63.86, 78.76,
                  83.84, 15.50),
    "residual":  (0.3965, 0.1068, 0.1093, 0.0679, 89.61, 97.46, 99.13, 37.58,
                  62.22, 1.865, 4.372, 53.59, 48.28, 41.22, 62.89, 78.09,
                  83.38, 15.71),
    "hybrid":    (0.3937, 0.0639, 0.1010, 0.0596, 90.76, 97.72, 99.17, 38.75,
                  64.41, 1.312, 3.733, 49.41, 42.94, 34.42, 64.24, 78.82,
                  83.86, 15.36),
}


def report_for(name):
    from hybridskip.metrics import MetricsReport, indicators
    row = dict(zip(COLUMNS, ROWS[name]))
    report = MetricsReport(
        rmse=row["rmse"], rmsle=row["rmsle"], absrel=row["absrel"],
        sqrel=row["sqrel"], delta_105=row["delta_105"],
        delta_110=row["delta_110"], delta_125=row["delta_125"],
        delta_125sq=row["delta_125sq"], delta_125cu=row["delta_125cu"],
        dbe_acc=row["dbe_acc"], dbe_comp=row["dbe_comp"],
        f1_025=row["f1_025_pct"] / 100.0, f1_050=row["f1_050_pct"] / 100.0,
        f1_100=row["f1_100_pct"] / 100.0, alpha_1125=row["alpha_1125"],
        alpha_225=row["alpha_225"], alpha_30=row["alpha_30"],
        rmse_deg=row["rmse_deg"])
    report.i_d, report.i_b, report.i_s = indicators(report)
    return report


def all_reports():
    return [(name, report_for(name)) for name in ROWS]
