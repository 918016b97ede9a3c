"""Functional and energy models of digital, TD-MS, and HD-MS multiply-accumulate units.

Three MAC flavors share one value contract (signed integer product plus
accumulator) but differ in how energy is charged:

* digital   - energy depends on bit width only, quadratic in b.
* tdms      - a pulse-width/counter scheme: one oscillator cycle per unit of
              x*w, so energy is affine in the product magnitude.
* hdms      - pure TD-MS up to 5-bit operands; above that, both operands are
              split into a low 5-bit and a high (b-5)-bit chunk and the four
              partial products run on the 5-bit kernel with digital shift-add.

All energies scale with the square of the supply voltage relative to the
calibration reference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear

MIN_BITS = 3
MAX_BITS = 8
TDMS_KERNEL_BITS = 5  # widest operand the pure time-domain kernel accepts

# Accumulator is 24-bit signed; overflow raises, never wraps.
ACC_BITS = 24
ACC_MIN = -(1 << (ACC_BITS - 1))
ACC_MAX = (1 << (ACC_BITS - 1)) - 1

MODELS = ("digital", "tdms", "hdms")


class CalibrationError(RuntimeError):
    """Raised when no non-negative coefficients can reproduce the anchors."""


def check_bits(bits: int) -> int:
    if not isinstance(bits, (int, np.integer)) or isinstance(bits, bool):
        raise TypeError(f"bit width must be an integer, got {bits!r}")
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bit width must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    return int(bits)


@dataclass(frozen=True)
class Operand:
    """Sign-magnitude operand: non-negative magnitude plus a sign in {+1, -1}."""

    magnitude: int
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if self.magnitude < 0:
            raise ValueError(f"magnitude must be non-negative, got {self.magnitude}")

    @property
    def value(self) -> int:
        return self.sign * self.magnitude

    def check_fits(self, bits: int) -> None:
        if self.magnitude >= (1 << bits):
            raise ValueError(
                f"magnitude {self.magnitude} does not fit in {bits} bits"
            )


@dataclass(frozen=True)
class MacResult:
    """Outcome of one multiply-accumulate: value, charged energy, cycle count."""

    value: int
    energy_pj: float
    dco_cycles: int
    kernel_passes: int = 1


@dataclass(frozen=True)
class EnergyParams:
    """Calibrated coefficients of the three energy models plus supply scaling.

    Digital energy per MAC:  c_d2*b^2 + c_d1*b + c_d0          [pJ]
    TD-MS energy per MAC:    e_0 + e_cyc*cycles + e_tr*b       [pJ]
    HD-MS adds e_sa per extra kernel pass beyond the first.
    Every figure is multiplied by (v_supply / v_ref)^2.
    """

    c_d2: float
    c_d1: float
    c_d0: float
    e_0: float
    e_cyc: float
    e_tr: float
    e_sa: float
    v_supply: float = 0.4
    v_ref: float = 0.4

    def __post_init__(self):
        for name in ("c_d2", "c_d1", "c_d0", "e_0", "e_cyc", "e_tr", "e_sa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("v_supply", "v_ref"):
            v = getattr(self, name)
            if not 0.4 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0.4, 1.0] V, got {v}")

    @property
    def voltage_scale(self) -> float:
        return (self.v_supply / self.v_ref) ** 2

    def at_voltage(self, v_supply: float) -> "EnergyParams":
        return replace(self, v_supply=v_supply)


@dataclass(frozen=True)
class HdmsPlan:
    """Chunk decomposition used by the HD-MS kernel at a given bit width.

    ``chunks`` lists (shift, width) per operand; ``partial_shifts`` gives the
    left-shift applied to each of the ``kernel_passes`` partial products.
    """

    bits: int
    chunk_width: int
    chunks: tuple
    partial_shifts: tuple
    kernel_passes: int


def hdms_plan(bits: int) -> HdmsPlan:
    """Plan the chunking for ``bits``-wide operands: single pass up to 5 bits,
    otherwise a 2x2 schoolbook split into low-5/high-(b-5) chunks."""
    bits = check_bits(bits)
    if bits <= TDMS_KERNEL_BITS:
        return HdmsPlan(
            bits=bits,
            chunk_width=TDMS_KERNEL_BITS,
            chunks=((0, bits),),
            partial_shifts=(0,),
            kernel_passes=1,
        )
    low = TDMS_KERNEL_BITS
    return HdmsPlan(
        bits=bits,
        chunk_width=TDMS_KERNEL_BITS,
        chunks=((0, low), (low, bits - low)),
        partial_shifts=(0, low, low, 2 * low),
        kernel_passes=4,
    )


def split_chunks(magnitude: int, plan: HdmsPlan) -> tuple:
    """Split a magnitude into the plan's chunk values (low chunk first)."""
    return tuple((magnitude >> shift) & ((1 << width) - 1) for shift, width in plan.chunks)


def recombine_chunks(chunks, plan: HdmsPlan) -> int:
    return sum(c << shift for c, (shift, _w) in zip(chunks, plan.chunks))


# ---------------------------------------------------------------------------
# quantization front-end


def quantize(x: float, bits: int, value_range: float) -> Operand:
    """Map a real in [-value_range, value_range] to a ``bits``-bit sign-magnitude
    operand, rounding to nearest and saturating at full scale."""
    bits = check_bits(bits)
    if not np.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    if value_range <= 0:
        raise ValueError(f"range must be positive, got {value_range}")
    full = (1 << bits) - 1
    mag = int(abs(x) / value_range * full + 0.5)
    return Operand(magnitude=min(mag, full), sign=1 if x >= 0 else -1)


def dequantize(op: Operand, bits: int, value_range: float) -> float:
    bits = check_bits(bits)
    if value_range <= 0:
        raise ValueError(f"range must be positive, got {value_range}")
    return op.sign * op.magnitude / ((1 << bits) - 1) * value_range


# ---------------------------------------------------------------------------
# energy primitives (pJ, before voltage scaling unless noted)


def digital_energy(bits: int, params: EnergyParams) -> float:
    """Energy of one digital MAC; independent of operand values."""
    return (params.c_d2 * bits * bits + params.c_d1 * bits + params.c_d0) * params.voltage_scale


def tdms_energy(cycles, bits: int, params: EnergyParams):
    """Energy of one TD-MS MAC with the given oscillator cycle count.

    Accepts a scalar or ndarray of cycle counts.
    """
    return (params.e_0 + params.e_cyc * np.asarray(cycles, dtype=float) + params.e_tr * bits) * params.voltage_scale


def hdms_energy(x_mag, w_mag, bits: int, params: EnergyParams):
    """Energy of one HD-MS MAC (scalar or ndarray operand magnitudes)."""
    if bits <= TDMS_KERNEL_BITS:
        return tdms_energy(np.asarray(x_mag) * np.asarray(w_mag), bits, params)
    x_mag = np.asarray(x_mag)
    w_mag = np.asarray(w_mag)
    low_mask = (1 << TDMS_KERNEL_BITS) - 1
    xl, xh = x_mag & low_mask, x_mag >> TDMS_KERNEL_BITS
    wl, wh = w_mag & low_mask, w_mag >> TDMS_KERNEL_BITS
    # four partial products, each on the 5-bit kernel
    cycles = xl * wl + xl * wh + xh * wl + xh * wh
    base = (
        4.0 * params.e_0
        + params.e_cyc * cycles.astype(float)
        + 4.0 * params.e_tr * TDMS_KERNEL_BITS
        + 3.0 * params.e_sa
    )
    return base * params.voltage_scale


# ---------------------------------------------------------------------------
# MAC operations


def _check_mac_inputs(x: Operand, w: Operand, acc: int, bits: int) -> int:
    bits = check_bits(bits)
    x.check_fits(bits)
    w.check_fits(bits)
    if not ACC_MIN <= acc <= ACC_MAX:
        raise OverflowError(f"accumulator input {acc} outside {ACC_BITS}-bit signed range")
    return bits


def _accumulate(acc: int, signed_product: int) -> int:
    value = acc + signed_product
    if not ACC_MIN <= value <= ACC_MAX:
        raise OverflowError(
            f"accumulator overflow: {acc} + {signed_product} leaves {ACC_BITS}-bit signed range"
        )
    return value


def tdms_mac(x: Operand, w: Operand, acc: int, params: EnergyParams, bits: int) -> MacResult:
    """Time-domain MAC: the counter runs for x*w oscillator cycles, counting up
    or down according to the sign product."""
    bits = _check_mac_inputs(x, w, acc, bits)
    cycles = x.magnitude * w.magnitude
    value = _accumulate(acc, x.sign * w.sign * cycles)
    return MacResult(
        value=value,
        energy_pj=float(tdms_energy(cycles, bits, params)),
        dco_cycles=cycles,
        kernel_passes=1,
    )


def digital_mac(x: Operand, w: Operand, acc: int, params: EnergyParams, bits: int) -> MacResult:
    """Digital baseline MAC: same value contract, operand-independent energy."""
    bits = _check_mac_inputs(x, w, acc, bits)
    product = x.magnitude * w.magnitude
    value = _accumulate(acc, x.sign * w.sign * product)
    return MacResult(
        value=value,
        energy_pj=float(digital_energy(bits, params)),
        dco_cycles=0,
        kernel_passes=1,
    )


def hdms_mac(x: Operand, w: Operand, acc: int, params: EnergyParams, bits: int) -> MacResult:
    """Hybrid MAC: below 6 bits this is exactly tdms_mac; above, the four
    chunk partial products are shifted and added back together."""
    bits = _check_mac_inputs(x, w, acc, bits)
    plan = hdms_plan(bits)
    if plan.kernel_passes == 1:
        return tdms_mac(x, w, acc, params, bits)
    xl, xh = split_chunks(x.magnitude, plan)
    wl, wh = split_chunks(w.magnitude, plan)
    partials = (xl * wl, xl * wh, xh * wl, xh * wh)
    cycles = sum(partials)
    product = sum(p << s for p, s in zip(partials, plan.partial_shifts))
    value = _accumulate(acc, x.sign * w.sign * product)
    return MacResult(
        value=value,
        energy_pj=float(hdms_energy(x.magnitude, w.magnitude, bits, params)),
        dco_cycles=cycles,
        kernel_passes=plan.kernel_passes,
    )


_MAC_FNS = {"digital": digital_mac, "tdms": tdms_mac, "hdms": hdms_mac}


def mac(model: str, x: Operand, w: Operand, acc: int, params: EnergyParams, bits: int) -> MacResult:
    try:
        fn = _MAC_FNS[model]
    except KeyError:
        raise ValueError(f"unknown MAC model {model!r}; expected one of {MODELS}") from None
    return fn(x, w, acc, params, bits)


# ---------------------------------------------------------------------------
# surfaces and sweeps


@dataclass(frozen=True)
class EnergySurface:
    """Dense (2^b)^2 grid of per-MAC value/energy/cycles for one model."""

    model: str
    bits: int
    x: np.ndarray        # shape (n, n) operand magnitude grids
    w: np.ndarray
    value: np.ndarray    # integer products
    energy_pj: np.ndarray
    cycles: np.ndarray

    def rows(self):
        """Yield (model, bits, x, w, value, energy_pj, cycles) row tuples."""
        for xi, wi, vi, ei, ci in zip(
            self.x.ravel(), self.w.ravel(), self.value.ravel(),
            self.energy_pj.ravel(), self.cycles.ravel(),
        ):
            yield (self.model, self.bits, int(xi), int(wi), int(vi), float(ei), int(ci))


def energy_surface(bits: int, model: str, params: EnergyParams) -> EnergySurface:
    """Evaluate the full magnitude grid for one model at one bit width."""
    bits = check_bits(bits)
    if model not in MODELS:
        raise ValueError(f"unknown MAC model {model!r}; expected one of {MODELS}")
    n = 1 << bits
    mags = np.arange(n)
    x, w = np.meshgrid(mags, mags, indexing="ij")
    value = x * w
    if model == "digital":
        energy = np.full((n, n), digital_energy(bits, params))
        cycles = np.zeros((n, n), dtype=int)
    elif model == "tdms":
        cycles = value
        energy = tdms_energy(cycles, bits, params)
    else:
        energy = hdms_energy(x, w, bits, params)
        if bits <= TDMS_KERNEL_BITS:
            cycles = value
        else:
            low_mask = (1 << TDMS_KERNEL_BITS) - 1
            xl, xh = x & low_mask, x >> TDMS_KERNEL_BITS
            wl, wh = w & low_mask, w >> TDMS_KERNEL_BITS
            cycles = xl * wl + xl * wh + xh * wl + xh * wh
    return EnergySurface(model=model, bits=bits, x=x, w=w, value=value,
                         energy_pj=np.asarray(energy, dtype=float), cycles=cycles)


def mean_energy(model: str, bits: int, params: EnergyParams) -> float:
    """Mean per-MAC energy over all (x, w) magnitude pairs at ``bits``."""
    return float(energy_surface(bits, model, params).energy_pj.mean())


# ---------------------------------------------------------------------------
# calibration

# Measured-chip anchor points: (bits, mean pJ/MAC, ratio to digital).
REFERENCE_ANCHORS = ((3, 0.22, 0.19), (8, 1.76, 0.69))

_CALIBRATION_REL_TOL = 0.5  # beyond this the anchor set is declared infeasible


def _fit_nonneg(a: np.ndarray, t: np.ndarray) -> np.ndarray:
    # scipy.optimize.nnls (>=1.12 rewrite) returns wrong answers on some small
    # systems; lsq_linear/trf is reliable and deterministic.
    res = lsq_linear(a, t, bounds=(0.0, np.inf), method="trf")
    return np.clip(res.x, 0.0, None)


def _hdms_unit_columns(bits_list) -> np.ndarray:
    """Design matrix of mean HD-MS energy per unit (e_0, e_cyc, e_tr, e_sa)."""
    names = ("e_0", "e_cyc", "e_tr", "e_sa")
    a = np.zeros((len(bits_list), len(names)))
    base = EnergyParams(c_d2=0, c_d1=0, c_d0=0, e_0=0, e_cyc=0, e_tr=0, e_sa=0)
    for j, name in enumerate(names):
        unit = replace(base, **{name: 1.0})
        for i, b in enumerate(bits_list):
            a[i, j] = mean_energy("hdms", b, unit)
    return a


def calibrate_energy(anchors=REFERENCE_ANCHORS) -> EnergyParams:
    """Fit non-negative energy coefficients so the mean HD-MS energy over
    uniform operands hits each anchor's target, and the digital model hits
    target / ratio.

    The TD-MS side is fit in two stages: transition and shift-add overheads
    are seeded with a fixed 5% energy share (they are secondary effects; the
    oscillator cycles dominate), then e_0 and e_cyc absorb the rest by
    least squares. Both stages are deterministic. Raises CalibrationError
    when the best fit misses an anchor by more than 50% relative.
    """
    anchors = [(check_bits(b), float(e), float(r)) for b, e, r in anchors]
    if len(anchors) < 2:
        raise ValueError("calibration needs at least 2 anchors")
    for b, e, r in anchors:
        if e <= 0 or r <= 0:
            raise ValueError(f"anchor targets must be positive, got {(b, e, r)}")

    bits_list = [b for b, _, _ in anchors]
    hdms_targets = np.array([e for _, e, _ in anchors])
    dig_targets = np.array([e / r for _, e, r in anchors])

    a_dig = np.array([[b * b, b, 1.0] for b in bits_list])
    dig_coefs = _fit_nonneg(a_dig, dig_targets)

    a_hdms = _hdms_unit_columns(bits_list)
    lo = int(np.argmin(bits_list))
    hi = int(np.argmax(bits_list))
    e_tr = 0.05 * hdms_targets[lo] / a_hdms[lo, 2]
    e_sa = 0.05 * hdms_targets[hi] / a_hdms[hi, 3] if a_hdms[hi, 3] > 0 else 0.0
    seeded = a_hdms[:, 2] * e_tr + a_hdms[:, 3] * e_sa
    # keep at least 75% of each target for the main-stage fit
    excess = seeded / hdms_targets
    if excess.max() > 0.25:
        shrink = 0.25 / excess.max()
        e_tr *= shrink
        e_sa *= shrink
        seeded *= shrink
    main_coefs = _fit_nonneg(a_hdms[:, :2], hdms_targets - seeded)

    params = EnergyParams(
        c_d2=float(dig_coefs[0]), c_d1=float(dig_coefs[1]), c_d0=float(dig_coefs[2]),
        e_0=float(main_coefs[0]), e_cyc=float(main_coefs[1]),
        e_tr=float(e_tr), e_sa=float(e_sa),
        v_supply=0.4, v_ref=0.4,
    )

    residuals = []
    for b, target_e, target_r in anchors:
        got_e = mean_energy("hdms", b, params)
        got_d = mean_energy("digital", b, params)
        residuals.append((b, got_e, target_e, got_d, target_e / target_r))
    worst = max(
        max(abs(ge - te) / te, abs(gd - td) / td) for _, ge, te, gd, td in residuals
    )
    if worst > _CALIBRATION_REL_TOL:
        lines = ", ".join(
            f"b={b}: hdms {ge:.4g} vs {te:.4g}, digital {gd:.4g} vs {td:.4g}"
            for b, ge, te, gd, td in residuals
        )
        raise CalibrationError(f"anchors infeasible (worst relative error {worst:.2f}): {lines}")
    return params


_default_params_cache = None


def default_params() -> EnergyParams:
    """Parameters calibrated against the reference chip anchors (cached)."""
    global _default_params_cache
    if _default_params_cache is None:
        _default_params_cache = calibrate_energy(REFERENCE_ANCHORS)
    return _default_params_cache


# ---------------------------------------------------------------------------
# params file round-trip (one `key = value` line per coefficient)

_PARAM_FIELDS = ("c_d2", "c_d1", "c_d0", "e_0", "e_cyc", "e_tr", "e_sa", "v_supply", "v_ref")


def save_energy_params(params: EnergyParams, path) -> None:
    lines = [f"{name} = {getattr(params, name)!r}" for name in _PARAM_FIELDS]
    Path(path).write_text("\n".join(lines) + "\n")


def load_energy_params(path) -> EnergyParams:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _PARAM_FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown coefficient {key!r}")
        values[key] = float(val)
    missing = [k for k in _PARAM_FIELDS if k not in values and not k.startswith("v_")]
    if missing:
        raise ValueError(f"{path}: missing coefficients {missing}")
    return EnergyParams(**values)
