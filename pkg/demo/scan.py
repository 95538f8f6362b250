"""
选择性扫描: sequential and chunked scans agree, and the backward pass of both matches
"""
import os
import sys
sys.path.append(os.getcwd())

import numpy as np

from implant_mamba.ssm.selective_scan import ScanInputs, scan_backward, scan_chunked, scan_sequential


def scan_demo(B=1, L=256, D=8, N=16, chunk=32, seed=0):
    rng = np.random.default_rng(seed)
    inputs = ScanInputs(x=rng.normal(size=(B, L, D)),
                        delta=np.log1p(np.exp(rng.normal(size=(B, L, D)))),
                        A=-np.exp(rng.normal(size=(D, N))),
                        Bmat=rng.normal(size=(B, L, N)),
                        Cmat=rng.normal(size=(B, L, N)),
                        Dskip=rng.normal(size=(D,)))
    y_seq = scan_sequential(inputs).data
    y_chunk = scan_chunked(inputs, chunk).data
    print(f'forward max |diff| {np.max(np.abs(y_seq - y_chunk)):.2e}')

    y_grad = rng.normal(size=y_seq.shape)
    full = scan_backward(inputs, y_grad)
    chunked = scan_backward(inputs, y_grad, chunk)
    for name in full._fields:
        print(f'{name:<6} max |diff| {np.max(np.abs(getattr(full, name) - getattr(chunked, name))):.2e}')


if __name__ == '__main__':
    scan_demo()
