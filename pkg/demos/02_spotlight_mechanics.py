#!/usr/bin/env python3
"""The Gaussian spotlight in isolation.

Builds weight maps for a few handles over a 16x8 cell grid, prints them as
text heatmaps, and shows the two properties the decoder relies on: weights
concentrate around the handle as sigma shrinks, and the whole map stays a
proper distribution so pooling is a convex combination of cell features.
"""

import numpy as np

from stn.spotlight import CoordinateGrids, Handle, context_vector, weight_map

LEVELS = " .:-=+*#%@"


def heat(weights):
    w = weights.T  # rows = y for display
    scaled = (w - w.min()) / max(w.max() - w.min(), 1e-300)
    for row in scaled:
        print("".join(LEVELS[min(int(v * 9.999), 9)] for v in row))


def main():
    grids = CoordinateGrids(16, 8)
    for handle in (Handle(8.5, 4.5, 8.0),    # the wide-open starting handle
                   Handle(8.5, 4.5, 2.0),
                   Handle(3.0, 2.0, 0.8),
                   Handle(14.0, 7.0, 0.5)):
        alpha = weight_map(handle, grids)
        print("\nhandle x=%.1f y=%.1f sigma=%.1f   (sum %.9f, peak %.3f)"
              % (handle.x, handle.y, handle.sigma, alpha.sum(), alpha.max()))
        heat(alpha)

    # pooling: a peaked map reads out the feature under the spotlight
    features = np.zeros((16, 8, 4))
    features[2, 1] = [1.0, 2.0, 3.0, 4.0]      # cell (3, 2) in 1-based terms
    tight = weight_map(Handle(3.0, 2.0, 0.5), grids)
    wide = weight_map(Handle(3.0, 2.0, 8.0), grids)
    print("\nfeature planted at cell (3, 2): %s" % features[2, 1])
    print("pooled, sigma=0.5: %s" % np.round(context_vector(tight, features), 3))
    print("pooled, sigma=8.0: %s" % np.round(context_vector(wide, features), 3))


if __name__ == "__main__":
    main()
