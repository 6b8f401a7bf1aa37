"""relightlab: environment-map conditioned relighting at desk scale.

Deterministic direct-lighting renderer with a light-transport oracle,
a small pixel-space conditional diffusion relighter, and a two-stage
voxel radiance-field relighting pipeline, all behind one CLI.
"""

import os

# numba's TBB layer is noisy/broken on some installs; workqueue is portable
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
