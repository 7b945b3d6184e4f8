import sys
import pathlib

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from grouprune import ir as _ir  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def zeroize_group(ir, group, indices):
    """Zero every member slice of a group at the given canonical indices;
    returns a modified copy."""
    z = ir.copy()
    for m in group.members:
        comp = z.component(m.half.component_id)
        for sl in m.half.scheme.slices:
            mv = np.moveaxis(z.weights[comp.params[sl.role]], sl.axis, 0)
            for k in indices:
                for local in m.transform.apply(k, m.half.channels):
                    mv[local] = 0.0
    return z


def alternating_selection(group, min_keep=1):
    """Every other selection unit, respecting min_keep; spread so that no
    concat/split port is emptied on sane models."""
    sel = []
    for u in group.units[::2]:
        if group.width - len(sel) - len(u) >= min_keep:
            sel.extend(u)
    return tuple(sorted(sel))


def tiny_smooth_net(seed, max_components=10):
    """Small everywhere-differentiable random net for gradient checks."""
    from grouprune.random_nets import random_ir

    return random_ir(seed, max_components=max_components, smooth=True,
                     max_channels=5, spatial_choices=(4,))
