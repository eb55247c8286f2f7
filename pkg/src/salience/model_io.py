"""Binary container for trained models.

Layout: magic "SALM", format version u32, scheme tag u8 (1 linear, 2 boost,
3 product-combination, 4 weighted-sum combination, 5 gated combination),
feature-group table, then the scheme payload. All integers little-endian;
arrays are raw little-endian buffers preceded by dtype code and shape.
Writing the same model twice produces identical bytes.
"""

import io
import struct
from pathlib import Path

import numpy as np

from .boosting import BoostModel, Stump
from .kernels import KernelSpec
from .mkl import MklModel
from .pipeline import ModelBundle
from .svm import LinearModel, SvmModel

MAGIC = b"SALM"
VERSION = 1
SCHEME_TAGS = {"linear-svm": 1, "adaboost": 2, "rbmkl": 3, "nlmkl": 4, "lmkl": 5}
_TAG_SCHEMES = {v: k for k, v in SCHEME_TAGS.items()}
_DTYPES = {0: "<f8", 1: "<i8"}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


class ModelFormatError(ValueError):
    pass


def _w_str(out, s: str):
    raw = s.encode("utf-8")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _w_arr(out, a):
    a = np.asarray(a)
    if a.dtype.kind == "i":
        a = a.astype(np.int64)
    else:
        a = a.astype(np.float64)
    code = _DTYPE_CODES[a.dtype]
    out.write(struct.pack("<BB", code, a.ndim))
    for d in a.shape:
        out.write(struct.pack("<I", d))
    out.write(np.ascontiguousarray(a).astype(_DTYPES[code]).tobytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.raw):
            raise ModelFormatError("model file is truncated")
        out = self.raw[self.at:self.at + n]
        self.at += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")

    def array(self):
        code = self.u8()
        if code not in _DTYPES:
            raise ModelFormatError(f"unknown array dtype code {code}")
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        dt = np.dtype(_DTYPES[code])
        flat = np.frombuffer(self.take(count * dt.itemsize), dt)
        return flat.reshape(shape).copy()

    def done(self):
        if self.at != len(self.raw):
            raise ModelFormatError("trailing data after model payload")


def _w_groups(out, groups: dict):
    out.write(struct.pack("<H", len(groups)))
    for name, (a, b) in sorted(groups.items(), key=lambda kv: kv[1]):
        _w_str(out, name)
        out.write(struct.pack("<II", a, b))


def _r_groups(r: _Reader) -> dict:
    return {r.string(): (r.u32(), r.u32()) for _ in range(r.u16())}


def _w_svm(out, m: SvmModel):
    _w_arr(out, m.alpha)
    out.write(struct.pack("<dd", m.b, m.c))
    _w_arr(out, m.support)
    _w_arr(out, m.y)


def _r_svm(r: _Reader) -> SvmModel:
    alpha = r.array()
    b, c = struct.unpack("<dd", r.take(16))
    return SvmModel(alpha=alpha, b=b, c=c, support=r.array(), y=r.array(),
                    iterations=0)


def _w_spec(out, spec: KernelSpec):
    _w_str(out, spec.kind)
    _w_str(out, spec.group)
    out.write(struct.pack("<IBd", int(spec.q), spec.gamma is not None,
                          spec.gamma if spec.gamma is not None else 0.0))


def _r_spec(r: _Reader) -> KernelSpec:
    kind = r.string()
    group = r.string()
    q, has_gamma, gamma = struct.unpack("<IBd", r.take(13))
    return KernelSpec(kind=kind, group=group, q=q,
                      gamma=gamma if has_gamma else None)


def save_model(path, bundle: ModelBundle) -> None:
    if bundle.method not in SCHEME_TAGS:
        raise ValueError(f"unknown method {bundle.method!r}")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IB", VERSION, SCHEME_TAGS[bundle.method]))
    _w_groups(out, bundle.groups)
    if bundle.method == "linear-svm":
        if bundle.linear is None:
            raise ValueError("bundle is missing its linear model")
        _w_arr(out, bundle.linear.w)
        out.write(struct.pack("<dd", bundle.linear.b, bundle.linear.c))
    elif bundle.method == "adaboost":
        if bundle.boost is None:
            raise ValueError("bundle is missing its boosted model")
        out.write(struct.pack("<I", bundle.boost.rounds))
        for st in bundle.boost.stumps:
            out.write(struct.pack("<Iddd", st.feature, st.threshold,
                                  st.left, st.right))
    else:
        m = bundle.mkl
        if m is None:
            raise ValueError("bundle is missing its kernel model")
        out.write(struct.pack("<B", len(bundle.specs)))
        for spec in bundle.specs:
            _w_spec(out, spec)
        _w_svm(out, m.svm)
        _w_arr(out, bundle.support_x)
        for sc in bundle.support_scale:
            _w_arr(out, sc)
        if bundle.method == "nlmkl":
            _w_arr(out, m.eta)
            out.write(struct.pack("<Id", m.degree, m.lam))
        elif bundle.method == "lmkl":
            _w_arr(out, m.gate_v)
            _w_arr(out, m.gate_v0)
            _w_arr(out, m.eta_support)
            _w_str(out, bundle.gating_group)
    Path(path).write_bytes(out.getvalue())


def load_model(path) -> ModelBundle:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ModelFormatError("not a model file")
    version = r.u32()
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    tag = r.u8()
    if tag not in _TAG_SCHEMES:
        raise ModelFormatError(f"unknown scheme tag {tag}")
    method = _TAG_SCHEMES[tag]
    groups = _r_groups(r)
    if method == "linear-svm":
        w = r.array()
        b, c = struct.unpack("<dd", r.take(16))
        r.done()
        return ModelBundle(method=method, groups=groups,
                           linear=LinearModel(w=w, b=b, c=c))
    if method == "adaboost":
        rounds = r.u32()
        stumps = []
        for _ in range(rounds):
            f, thr, left, right = struct.unpack("<Iddd", r.take(28))
            stumps.append(Stump(feature=f, threshold=thr, left=left, right=right))
        r.done()
        return ModelBundle(method=method, groups=groups,
                           boost=BoostModel(stumps=tuple(stumps)))
    n_specs = r.u8()
    specs = tuple(_r_spec(r) for _ in range(n_specs))
    svm = _r_svm(r)
    support_x = r.array()
    scales = tuple(r.array() for _ in range(n_specs))
    eta = None
    degree, lam = 2, 1.0
    gate_v = gate_v0 = eta_support = None
    gating_group = None
    if method == "nlmkl":
        eta = r.array()
        degree, lam = struct.unpack("<Id", r.take(12))
    elif method == "lmkl":
        gate_v = r.array()
        gate_v0 = r.array()
        eta_support = r.array()
        gating_group = r.string()
    r.done()
    mkl = MklModel(scheme=method, svm=svm, names=[sp.group for sp in specs],
                   eta=eta, degree=degree, lam=lam, gate_v=gate_v,
                   gate_v0=gate_v0, eta_support=eta_support)
    return ModelBundle(method=method, groups=groups, mkl=mkl, specs=specs,
                       support_x=support_x, support_scale=scales,
                       gating_group=gating_group)
