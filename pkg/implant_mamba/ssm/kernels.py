"""
numba kernels of the selective-scan recurrence

    h[t, n] = exp(delta[t] * A[n]) * h[t - 1, n] + delta[t] * B[t, n] * x[t]
    y[t]    = sum_n C[t, n] * h[t, n] + D * x[t]

one independent scalar recurrence per (batch, channel, state). Shapes:
x, delta, y [B, L, Din]; A [Din, N]; Bm, Cm [B, L, N]; Dskip [Din];
chunk summaries and boundary states [B, n_chunks, Din, N].

Every parallel loop writes a disjoint slice of its outputs, results do not depend on the thread count.
"""
import numba
import numpy as np
from numba import njit, prange

from ..util import Log, worker_count
from ..util.variables import LOG

log = Log.getLogger(LOG.Scan.value)


def configure_threads(count=None):
    """ IMPLANTMAMBA_THREADS (or `count`) caps the numba pool """
    count = min(count or worker_count(), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(count)
    log.debug(f'numba threads: {count}')
    return count


@njit(parallel=True, cache=True)
def scan_forward_sequential(x, delta, A, Bm, Cm, Dskip, y):
    B, L, D = x.shape
    N = A.shape[1]
    for job in prange(B * D):
        b = job // D
        d = job % D
        h = np.zeros(N, dtype=x.dtype)
        for t in range(L):
            dt = delta[b, t, d]
            xt = x[b, t, d]
            acc = Dskip[d] * xt
            for n in range(N):
                h[n] = np.exp(dt * A[d, n]) * h[n] + dt * Bm[b, t, n] * xt
                acc += Cm[b, t, n] * h[n]
            y[b, t, d] = acc


@njit(parallel=True, cache=True)
def chunk_summaries(x, delta, A, Bm, chunk, decay, local):
    """ per chunk: decay = product of Abar, local = end state when entered from h = 0 """
    B, L, D = x.shape
    N = A.shape[1]
    n_chunks = decay.shape[1]
    for job in prange(B * n_chunks):
        b = job // n_chunks
        c = job % n_chunks
        start = c * chunk
        end = min(start + chunk, L)
        for d in range(D):
            for n in range(N):
                a = 1.0
                h = 0.0
                for t in range(start, end):
                    abar = np.exp(delta[b, t, d] * A[d, n])
                    a *= abar
                    h = abar * h + delta[b, t, d] * Bm[b, t, n] * x[b, t, d]
                decay[b, c, d, n] = a
                local[b, c, d, n] = h


@njit(parallel=True, cache=True)
def compose_boundaries(decay, local, h0):
    """ h0[:, c] = state entering chunk c; composes h_out = a * h_in + b chunk after chunk """
    B, n_chunks, D, N = decay.shape
    for job in prange(B * D):
        b = job // D
        d = job % D
        for n in range(N):
            h = 0.0
            for c in range(n_chunks):
                h0[b, c, d, n] = h
                h = decay[b, c, d, n] * h + local[b, c, d, n]


@njit(parallel=True, cache=True)
def scan_forward_chunks(x, delta, A, Bm, Cm, Dskip, h0, chunk, y):
    B, L, D = x.shape
    N = A.shape[1]
    n_chunks = h0.shape[1]
    for job in prange(B * n_chunks):
        b = job // n_chunks
        c = job % n_chunks
        start = c * chunk
        end = min(start + chunk, L)
        h = np.empty(N, dtype=x.dtype)
        for d in range(D):
            for n in range(N):
                h[n] = h0[b, c, d, n]
            for t in range(start, end):
                dt = delta[b, t, d]
                xt = x[b, t, d]
                acc = Dskip[d] * xt
                for n in range(N):
                    h[n] = np.exp(dt * A[d, n]) * h[n] + dt * Bm[b, t, n] * xt
                    acc += Cm[b, t, n] * h[n]
                y[b, t, d] = acc


@njit(parallel=True, cache=True)
def adjoint_summaries(delta, A, Cm, gy, chunk, decay, carry):
    """ per chunk, reverse time: decay = product of Abar, carry = Abar[start] * adjoint at start from zero """
    B, L, D = gy.shape
    N = A.shape[1]
    n_chunks = decay.shape[1]
    for job in prange(B * n_chunks):
        b = job // n_chunks
        c = job % n_chunks
        start = c * chunk
        end = min(start + chunk, L)
        for d in range(D):
            for n in range(N):
                a = 1.0
                k = 0.0
                for t in range(end - 1, start - 1, -1):
                    abar = np.exp(delta[b, t, d] * A[d, n])
                    k = abar * (gy[b, t, d] * Cm[b, t, n] + k)
                    a *= abar
                decay[b, c, d, n] = a
                carry[b, c, d, n] = k


@njit(parallel=True, cache=True)
def compose_adjoints(decay, carry, kappa):
    """ kappa[:, c] = adjoint flowing into the last step of chunk c from later chunks """
    B, n_chunks, D, N = decay.shape
    for job in prange(B * D):
        b = job // D
        d = job % D
        for n in range(N):
            k = 0.0
            for c in range(n_chunks - 1, -1, -1):
                kappa[b, c, d, n] = k
                k = carry[b, c, d, n] + decay[b, c, d, n] * k


@njit(parallel=True, cache=True)
def scan_backward_chunks(x, delta, A, Bm, Cm, Dskip, h0, kappa, gy, chunk,
                         gx, gdelta, gB, gC, gA_part, gD_part):
    """
    Reverse-time adjoint, lambda[t] = gy[t] C[t] + Abar[t + 1] lambda[t + 1], one chunk per job.
    States inside a chunk are recomputed from its boundary state h0.
    gB, gC, gA_part, gD_part must be zeroed by the caller.
    """
    B, L, D = x.shape
    N = A.shape[1]
    n_chunks = h0.shape[1]
    for job in prange(B * n_chunks):
        b = job // n_chunks
        c = job % n_chunks
        start = c * chunk
        end = min(start + chunk, L)
        hs = np.empty((end - start, N), dtype=x.dtype)
        k = np.empty(N, dtype=x.dtype)
        for d in range(D):
            for n in range(N):
                prev = h0[b, c, d, n]
                for t in range(start, end):
                    prev = np.exp(delta[b, t, d] * A[d, n]) * prev + delta[b, t, d] * Bm[b, t, n] * x[b, t, d]
                    hs[t - start, n] = prev
                k[n] = kappa[b, c, d, n]
            for t in range(end - 1, start - 1, -1):
                dt = delta[b, t, d]
                xt = x[b, t, d]
                g = gy[b, t, d]
                gx_acc = g * Dskip[d]
                gdt_acc = 0.0
                gD_part[b, c, d] += g * xt
                for n in range(N):
                    abar = np.exp(dt * A[d, n])
                    if t > start:
                        hprev = hs[t - start - 1, n]
                    else:
                        hprev = h0[b, c, d, n]
                    lam = g * Cm[b, t, n] + k[n]
                    gC[b, t, n] += g * hs[t - start, n]
                    gB[b, t, n] += lam * dt * xt
                    gx_acc += lam * dt * Bm[b, t, n]
                    gdt_acc += lam * (Bm[b, t, n] * xt + A[d, n] * abar * hprev)
                    gA_part[b, c, d, n] += lam * dt * abar * hprev
                    k[n] = abar * lam
                gx[b, t, d] = gx_acc
                gdelta[b, t, d] = gdt_acc
