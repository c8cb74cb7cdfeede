"""Self-supervised depth and ego-motion objective on a small numpy autodiff core.

Modules: ``tensor`` (autodiff), ``geometry`` (pinhole + SE(3)), ``view_synthesis``
(bidirectional warping), ``losses`` (all loss terms and masks), ``networks``
(toy DepthNet / CameraNet + checkpoints), ``synth`` (ray-cast oracle scenes),
``metrics`` (depth metrics, ATE), ``config`` / ``train`` / ``evaluate`` / ``cli``.
"""

__version__ = "0.1.0"
