"""Swarm-aware multi-UAV tracking on synthetic scenes.

Modules
-------
tensor      reverse-mode autodiff core and gradient checking
nn          layers (linear, attention, causal conv) and the SGD optimizer
predictor   swarm-coupled trajectory prediction
fusion      trajectory-guided feature fusion over multi-scale pyramids
detection   anchor-free detection head, embedder, and training losses
tracker     online sliding-window association and the full pipeline
simulator   deterministic synthetic swarm scenes
metrics     MOTA / IDF1 / HOTA / IDSW evaluation
reference   independent loop and enumeration oracles
kernels     numba-accelerated hot kernels with a pure-numpy fallback
"""

__version__ = "0.1.0"
