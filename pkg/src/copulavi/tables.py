"""Reference results tables and the settings used to reproduce them."""
from dataclasses import dataclass, field

__all__ = ["TableRow", "TableSetup", "TABLES"]


@dataclass(frozen=True)
class TableRow:
    name: str
    kind: str
    reference: float


@dataclass(frozen=True)
class TableSetup:
    target: dict
    rows: tuple
    ordering: tuple  # pairs (i, j, strict): value[i] >= value[j] (or >)
    tolerance: float
    train: dict
    init_at_map: bool = False
    n_datasets: int = 1
    min_order_passes: int = 1
    family: dict = field(default_factory=dict)
    mask_search: bool = False  # fit every flip orientation, keep the best ELBO


TABLES = {
    "table2": TableSetup(
        target={"label": "horseshoe", "y_obs": 0.01},
        rows=(TableRow("3-mixture", "mixture", 0.08),
              TableRow("copula-like", "copula_rot", 0.04),
              TableRow("full-covariance", "gauss_fullcov", -0.04),
              TableRow("mean-field", "gauss_meanfield", -1.24)),
        ordering=((0, 1, False), (1, 2, True), (2, 3, True)),
        tolerance=0.15,
        train={"iterations": 20000, "learning_rate": 0.002, "mc_samples_per_step": 16,
               "elbo_eval_samples": 20000},
    ),
    "table1": TableSetup(
        target={"label": "logistic", "tau": 0.01},
        rows=(TableRow("copula-rot", "copula_rot", -2.19),
              TableRow("copula-norot", "copula_norot", -2.30),
              TableRow("full-covariance", "gauss_fullcov", -2.97),
              TableRow("mean-field", "gauss_meanfield", -3.42)),
        ordering=((0, 1, False), (1, 2, True), (2, 3, True)),
        tolerance=0.5,
        train={"iterations": 20000, "learning_rate": 0.01, "mc_samples_per_step": 16,
               "elbo_eval_samples": 100000},
        init_at_map=True,
        n_datasets=5,
        min_order_passes=4,
        mask_search=True,
    ),
}
