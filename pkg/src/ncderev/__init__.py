"""Single-channel speech dereverberation toolkit.

Per-STFT-bin non-causal complex FIR filters with a closed-form MSE fit,
an MLP spectral mapper with causal/non-causal context windows, image-method
reverberant corpus synthesis, semi-enhanced feature mixing, and
bin-trajectory autocorrelation diagnostics. See the ``cli`` module or the
``ncderev`` console script for the batch experiment entry points.
"""

__version__ = "0.1.0"
