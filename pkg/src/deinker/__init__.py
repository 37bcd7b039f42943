"""deinker: marker-ink removal for H&E whole-slide images.

Unpaired image-to-image translation removes pathologist pen annotations,
overlap-averaged tiling reconstructs occlusion-free slides, and a battery of
instruments (classifier fooling rate, gradient-magnitude correlation, nuclei
recovery, human blind test) quantifies the restoration.
"""

__version__ = "0.1.0"
