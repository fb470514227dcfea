"""American option pricing by Fourier-cosine expansion, with tools to
extract implied volatility and implied dividend yield from quote pairs."""

from .calibrate import (
    CalibrationResult,
    DeConfig,
    calibrate_direct,
    cann_backward,
    de_optimize,
    implied_vol_predict,
)
from .cos_engine import (
    CosConfig,
    ExercisePoints,
    MarketParams,
    PriceResult,
    call_via_symmetry,
    char_fn,
    continuation_coeffs,
    continuation_value,
    find_exercise_points,
    payoff_coeffs,
    price_american,
    price_bermudan,
    truncation_interval,
    vega_cos,
)
from .dataset import (
    FORWARD_BOX,
    IV_BOX,
    Dataset,
    ParamBox,
    generate_forward_dataset,
    generate_iv_dataset,
    lhs_sample,
    load_dataset,
    save_dataset,
    split,
)
from .neuralnet import (
    AdamState,
    MetricsReport,
    Mlp,
    TrainConfig,
    TrainResult,
    adam_step,
    forward,
    grad,
    init_glorot,
    load_weights,
    metrics,
    save_weights,
    train,
)
from .reference import (
    ParityReport,
    binomial_american,
    early_exercise_premiums,
    european_bs,
    european_vega_bs,
    implied_div_european,
)
from .region import RegionLabel, classify, intrinsic_put, squash

__version__ = "0.1.0"
