"""Parameter and FLOP accounting over resolved layer graphs.

Counts are symbolic: they come from layer shapes, never from executing
tensors. Parameters are trainable scalars only (batch-norm running
statistics are state, not parameters). FLOPs are per single image at the
resolved input resolution under the convention recorded in the report.
"""

from dataclasses import dataclass

from .layers import FLOP_CONVENTION, Layer


@dataclass
class CostRow:
    path: str
    kind: str
    out_shape: tuple
    params: int
    flops: int


@dataclass
class CostReport:
    rows: list
    total_params: int
    total_flops: int
    convention: str = FLOP_CONVENTION

    def table(self):
        """Human-readable table, one line per row plus totals."""
        width = max([len(r.path) for r in self.rows] + [10])
        lines = [f"{'layer':<{width}}  {'kind':<24} {'output':>16} {'params':>12} {'flops':>16}"]
        for r in self.rows:
            shape = "x".join(str(s) for s in r.out_shape) if r.out_shape else "-"
            lines.append(f"{r.path:<{width}}  {r.kind:<24} {shape:>16} {r.params:>12} {r.flops:>16}")
        lines.append(f"{'total':<{width}}  {'':<24} {'':>16} {self.total_params:>12} {self.total_flops:>16}")
        lines.append(f"convention: {self.convention}")
        return "\n".join(lines)


def count_params(model: Layer) -> int:
    return model.param_count()


def count_flops(model: Layer) -> int:
    return model.flop_count()


def summarize(model: Layer) -> CostReport:
    """Itemised report; row sums equal the totals exactly."""
    rows = []
    for path, layer in model.named_layers():
        has_children = any(isinstance(c, Layer) for _, c in layer.children())
        if has_children:
            extra = layer.extra_flops()
            if extra:
                rows.append(CostRow(path or "<root>", type(layer).__name__ + " (glue)",
                                    getattr(layer, "out_shape", None), 0, extra))
        else:
            rows.append(CostRow(path or "<root>", type(layer).__name__,
                                getattr(layer, "out_shape", None),
                                layer.param_count(), layer.flop_count()))
    total_params = sum(r.params for r in rows)
    total_flops = sum(r.flops for r in rows)
    return CostReport(rows=rows, total_params=total_params, total_flops=total_flops)
