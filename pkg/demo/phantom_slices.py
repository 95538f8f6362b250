"""
打印 phantom 的中间切片, handy for eyeballing the arch, the gap and the implant cylinder
"""
import os
import sys
sys.path.append(os.getcwd())

import numpy as np

from implant_mamba.phantom.phantom import PhantomParams, generate

SHADES = ' .:-=+*#%@'


def show(seed=0, extent=32):
    phantom = generate(seed, extent, PhantomParams())
    print(f'seed {seed}: apex {phantom.apex} base {phantom.base} slope {np.round(phantom.slope, 3)}')
    x = phantom.apex[0]
    volume = phantom.volume[0][:, :, x]
    mask = phantom.mask[:, :, x] > 0
    lo, hi = float(volume.min()), float(volume.max())
    for z in reversed(range(volume.shape[0])):
        line = ''
        for y in range(volume.shape[1]):
            if mask[z, y]:
                line += 'I'
            else:
                level = (volume[z, y] - lo) / max(hi - lo, 1e-6)
                line += SHADES[min(int(level * len(SHADES)), len(SHADES) - 1)]
        print(line)


if __name__ == '__main__':
    show(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
