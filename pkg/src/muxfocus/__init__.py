"""Single-shot autofocus from a two-LED colour-multiplexed brightfield frame.

Defocus splits the red and green illumination images along y by an amount
proportional to the defocus distance; estimating that separation (by
cross-correlation or mutual information) predicts how far to move the
objective before the next tile is imaged.
"""
from .crosstalk import CrosstalkCoefficients, correct, estimate_coefficients, mix
from .focus import (
    CalibrationCurve,
    best_focus,
    brenner,
    fit_calibration,
    predict_defocus,
    sweep_calibration,
)
from .frames import ColorFrame, GroundTruthPair, MuxFocusError
from .optics import (
    OpticsConfig,
    ZStack,
    channel_separation,
    generate_phantom,
    render_brightfield,
    render_multiplexed,
    render_zstack,
    shift_per_micron,
)
from .scan import FocusProfile, ScanPlan, ScanReport, TimingModel, run_scan, summarize
from .shift import (
    ShiftEstimate,
    correlation_profile,
    detect_layers,
    estimate_shift,
    mi_shift,
    mutual_information,
    xcorr_shift,
)

__version__ = "0.1.0"
