"""Attribution methods for small numpy CNNs, scored by necessity, sufficiency
and proportionality criteria."""

from .attributions import (
    METHODS,
    AttributionMap,
    MethodConfig,
    attribute,
    deeplift_rescale,
    gradcam,
    guided_backprop,
    integrated_gradient,
    lrp_alpha2beta1,
    random_attribution,
    saliency,
    smoothgrad,
)
from .errors import (
    ConfigError,
    DegenerateScoreError,
    EmptyInputError,
    EmptyPositiveSetError,
    FormatError,
    ModelFormatError,
    NoConvLayerError,
    RangeError,
    ShapeError,
    UndefinedError,
    VersionError,
)
from .harness import AggregateSummary, MetricReport, RunConfig, evaluate_map, run_eval, select_winners
from .network import BackwardRuleSet, Model, backward_input, forward, load_model, predict, save_model
from .ordering import (
    OrderedPixels,
    PerturbationCurve,
    ablation_curve,
    aopc,
    atom,
    construction_curve,
    logical_necessity_index,
    logical_sufficiency_index,
    n_ord,
    order_pixels,
    s_ord,
)
from .proportionality import ShareCurve, area_between, proportionality, share_curve, tpn, tps

__version__ = "0.1.0"
