"""Exact parameter and multiply-accumulate accounting per operator.

Counts are exact integers derived from the layer dimensions; overhead
ratios against the no-fusion baseline are exact rationals.  The closed
forms per kind, with Ci/Co input/output channels, K the in-plane kernel
extent and D/H/W the volume dims:

    kind       params              MACs
    nofusion   Co*Ci*K^2           D*H*W*Co*Ci*K^2
    i3d        Co*Ci*K^3           D*H*W*Co*Ci*K^3
    p3d        + Co*Co*K           + D*H*W*Co*Co*K
    acs        Co*Ci*K^2           D*H*W*Co*Ci*K^2
    tsm        Co*Ci*K^2           D*H*W*Co*Ci*K^2   (shifts are copies)
    a3d        + D^2*Ci            + D^2*H*W*Ci

so the overhead ratios are 1, K, 1 + Co/(Ci*K), 1, 1, and
1 + D^2/(Co*K^2) for parameters / 1 + D/(Co*K^2) for MACs.

MACs are the primary unit; a FLOP display doubles them (one multiply
plus one add) and leaves every ratio unchanged.
"""

from dataclasses import dataclass
from fractions import Fraction

from .operators import OperatorKind, acs_split


@dataclass(frozen=True)
class LayerDims:
    """One fusion layer's dimensions: channels in/out, kernel extent, volume."""

    c_in: int
    c_out: int
    k: int
    d: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("c_in", "c_out", "k", "d", "h", "w"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.k % 2 != 1:
            raise ValueError(f"kernel extent must be odd, got {self.k}")


def _validate(kind: OperatorKind, dims: LayerDims) -> None:
    if not isinstance(kind, OperatorKind):
        raise TypeError(f"kind must be an OperatorKind, got {kind!r}")
    if kind is OperatorKind.ACS:
        acs_split(dims.c_out)


def count_params(kind: OperatorKind, dims: LayerDims) -> int:
    """Trainable scalars of one layer; equals the operator state's size."""
    _validate(kind, dims)
    base = dims.c_out * dims.c_in * dims.k * dims.k
    if kind is OperatorKind.I3D:
        return base * dims.k
    if kind is OperatorKind.P3D:
        return base + dims.c_out * dims.c_out * dims.k
    if kind is OperatorKind.A3D:
        return base + dims.d * dims.d * dims.c_in
    return base


def count_macs(kind: OperatorKind, dims: LayerDims) -> int:
    """Multiply-accumulates of one same-padded forward pass.

    Padding taps count (the arithmetic is performed on the zeros); pure
    slice shifts and copies count zero.
    """
    _validate(kind, dims)
    hw = dims.h * dims.w
    base = dims.d * hw * dims.c_out * dims.c_in * dims.k * dims.k
    if kind is OperatorKind.I3D:
        return base * dims.k
    if kind is OperatorKind.P3D:
        return base + dims.d * hw * dims.c_out * dims.c_out * dims.k
    if kind is OperatorKind.A3D:
        return base + dims.d * dims.d * hw * dims.c_in
    return base


def overhead_params(kind: OperatorKind, dims: LayerDims) -> Fraction:
    """Exact parameter ratio versus the no-fusion layer of the same dims."""
    return Fraction(count_params(kind, dims), count_params(OperatorKind.NOFUSION, dims))


def overhead_macs(kind: OperatorKind, dims: LayerDims) -> Fraction:
    """Exact MAC ratio versus the no-fusion layer of the same dims."""
    return Fraction(count_macs(kind, dims), count_macs(OperatorKind.NOFUSION, dims))


@dataclass(frozen=True)
class LayerCost:
    dims: LayerDims
    params: int
    macs: int
    overhead_params: Fraction
    overhead_macs: Fraction


@dataclass(frozen=True)
class CostReport:
    """Per-layer and total cost of a stack of fusion layers of one kind."""

    kind: OperatorKind
    layers: tuple[LayerCost, ...]
    total_params: int
    total_macs: int
    total_overhead_params: Fraction
    total_overhead_macs: Fraction

    @property
    def gmacs(self) -> float:
        return self.total_macs / 1e9

    @property
    def gmacs_display(self) -> str:
        """Total GMACs at the two-decimal precision used for comparisons."""
        return f"{self.gmacs:.2f}"

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs


def backbone_cost(kind: OperatorKind, layers) -> CostReport:
    """Sum per-layer counts; overheads compare against no-fusion totals."""
    layers = list(layers)
    if not layers:
        raise ValueError("layer list must be nonempty")
    per_layer = []
    total_p = total_m = base_p = base_m = 0
    for dims in layers:
        p = count_params(kind, dims)
        m = count_macs(kind, dims)
        per_layer.append(LayerCost(dims, p, m,
                                   overhead_params(kind, dims), overhead_macs(kind, dims)))
        total_p += p
        total_m += m
        base_p += count_params(OperatorKind.NOFUSION, dims)
        base_m += count_macs(OperatorKind.NOFUSION, dims)
    return CostReport(kind, tuple(per_layer), total_p, total_m,
                      Fraction(total_p, base_p), Fraction(total_m, base_m))


def _fraction_str(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def format_table(reports, flops: bool = False) -> str:
    """Column-aligned text table over one or more kinds' cost reports."""
    unit = "flops" if flops else "macs"
    header = ["kind", "layer", "cin", "cout", "k", "d", "h", "w",
              "params", unit, "ovh_params", f"ovh_{unit}"]
    rows = [header]
    for rep in reports:
        for i, lc in enumerate(rep.layers):
            d = lc.dims
            work = 2 * lc.macs if flops else lc.macs
            rows.append([rep.kind.value, str(i), str(d.c_in), str(d.c_out), str(d.k),
                         str(d.d), str(d.h), str(d.w), str(lc.params), str(work),
                         f"{_fraction_str(lc.overhead_params)} ({float(lc.overhead_params):.4f})",
                         f"{_fraction_str(lc.overhead_macs)} ({float(lc.overhead_macs):.4f})"])
        total_work = rep.total_flops if flops else rep.total_macs
        rows.append([rep.kind.value, "total", "", "", "", "", "", "",
                     str(rep.total_params), str(total_work),
                     f"{_fraction_str(rep.total_overhead_params)} "
                     f"({float(rep.total_overhead_params):.4f})",
                     f"{_fraction_str(rep.total_overhead_macs)} "
                     f"({float(rep.total_overhead_macs):.4f})"])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def format_csv(reports) -> str:
    """Machine-readable lines: kind,layer,params,macs,overhead_params,overhead_macs.

    Overheads are exact rationals rendered as n/d (or a bare integer).
    Layer is the zero-based index, with a final `total` row per kind.
    """
    lines = ["kind,layer,params,macs,overhead_params,overhead_macs"]
    for rep in reports:
        for i, lc in enumerate(rep.layers):
            lines.append(f"{rep.kind.value},{i},{lc.params},{lc.macs},"
                         f"{_fraction_str(lc.overhead_params)},{_fraction_str(lc.overhead_macs)}")
        lines.append(f"{rep.kind.value},total,{rep.total_params},{rep.total_macs},"
                     f"{_fraction_str(rep.total_overhead_params)},"
                     f"{_fraction_str(rep.total_overhead_macs)}")
    return "\n".join(lines)
