"""Eigenrisk-parity and agnostic risk-parity portfolio construction."""

from .backtest import BacktestConfig, BacktestReport, eigenrisk_experiment, run_backtest, summarize
from .data import ReturnsPanel, SyntheticSpec, generate_synthetic, load_csv, normalize_panel, save_csv
from .estimators import (
    CorrelationModel,
    QModel,
    RIEConfig,
    empirical_correlation,
    materialize_q,
    rie_clean,
    shrink_correlation,
)
from .matlib import EigenDecomposition, mahalanobis_gap, random_rotation, spd_power, sym_eigen
from .portfolio import (
    AllocationVector,
    allocate_arp,
    allocate_equal,
    allocate_erp,
    allocate_markowitz,
    eigenrisk_profile,
    realized_gain,
    rotation_invariance_check,
    volatility_target,
    whiten_indicators,
    whiten_returns,
)
from .signals import IndicatorPanel, indicator_covariance, trend_indicator

__version__ = "0.1.0"
