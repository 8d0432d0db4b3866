"""Process-result consistency anomaly detection for multimodal weld data.

The detector reconstructs a latent description of the finished weld surface
from the in-process observations (video, audio, sensor channels) and scores a
weld by how badly that reconstruction misses.
"""

__version__ = "0.1.0"
