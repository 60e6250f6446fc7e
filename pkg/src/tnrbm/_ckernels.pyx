# cython: language_level=3
"""Compiled kernels. Same contracts as :mod:`tnrbm._pykernels`.

The MPO sweep issues one BLAS ``dgemm`` per leading-batch row straight from C,
so small models (the regime of Gibbs chains on toy data and of exhaustive
enumeration) skip the per-step numpy dispatch entirely.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def sweep(state, list mats, list shapes):
    cdef cnp.ndarray cur = np.ascontiguousarray(state, dtype=np.float64)
    cdef cnp.ndarray out, mat
    cdef Py_ssize_t lead = cur.shape[0]
    cdef Py_ssize_t ba = lead
    cdef Py_ssize_t b, rest, total
    cdef int r, i, j, rn, ri, jrn, m, n, nba
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char no = b'N'
    cdef char tr = b'T'
    cdef double* sp
    cdef double* op
    cdef double* mp
    cdef Py_ssize_t t
    for t in range(len(mats)):
        r, i, j, rn = shapes[t]
        ri = r * i
        jrn = j * rn
        total = cur.size
        if ri == 0 or total % (ba * ri):
            raise ValueError("state size %d incompatible with core shape %r" % (total, shapes[t]))
        rest = total // (ba * ri)
        mat = np.ascontiguousarray(mats[t], dtype=np.float64)
        out = np.empty(ba * jrn * rest, dtype=np.float64)
        sp = <double*> cnp.PyArray_DATA(cur)
        op = <double*> cnp.PyArray_DATA(out)
        mp = <double*> cnp.PyArray_DATA(mat)
        m = <int> rest
        with nogil:
            if rest == 1:
                # row-major out(ba, jrn) = S(ba, ri) @ M(ri, jrn)
                nba = <int> ba
                dgemm(&no, &no, &jrn, &nba, &ri, &one, mp, &jrn, sp, &ri, &zero, op, &jrn)
            else:
                # row-major out_b(jrn, rest) = M.T(jrn, ri) @ S_b(ri, rest)
                for b in range(ba):
                    dgemm(&no, &tr, &m, &jrn, &ri, &one, sp + b * ri * rest, &m,
                          mp, &jrn, &zero, op + b * jrn * rest, &m)
        ba *= j
        cur = out
    return cur.reshape(lead, -1)


def sigmoid(x):
    cdef cnp.ndarray src = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray dst = np.empty_like(src)
    cdef double* s = <double*> cnp.PyArray_DATA(src)
    cdef double* d = <double*> cnp.PyArray_DATA(dst)
    cdef Py_ssize_t n = src.size
    cdef Py_ssize_t k
    cdef double e
    with nogil:
        for k in range(n):
            if s[k] >= 0:
                d[k] = 1.0 / (1.0 + exp(-s[k]))
            else:
                e = exp(s[k])
                d[k] = e / (1.0 + e)
    return dst


def bernoulli(probs, uniforms):
    cdef cnp.ndarray p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef cnp.ndarray u = np.ascontiguousarray(uniforms, dtype=np.float64)
    if p.size != u.size:
        raise ValueError("probs and uniforms differ in size")
    cdef cnp.ndarray out = np.empty_like(p)
    cdef double* pp = <double*> cnp.PyArray_DATA(p)
    cdef double* up = <double*> cnp.PyArray_DATA(u)
    cdef double* op = <double*> cnp.PyArray_DATA(out)
    cdef Py_ssize_t n = p.size
    cdef Py_ssize_t k
    with nogil:
        for k in range(n):
            op[k] = 1.0 if up[k] < pp[k] else 0.0
    return out
