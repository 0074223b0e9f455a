"""Dump standard-form problems in the sparse SDPA text format (.dat-s).

The written file encodes the problem as the SDPA dual pair

    max <F0, Y>  s.t.  <Fr, Y> = c_r,  Y PSD

with F0 = -C, Fr = A_r and c_r = b_r, which is our primal up to the sign
of the objective.  Free scalars are split into differences of two
non-negative diagonal entries; non-negative scalars and the split parts
live in one trailing diagonal block (negative block size, per the
format).  Only upper-triangular entries are written.
"""

from __future__ import annotations

from vecstab.sdp_backend.problem import SdpProblem

__all__ = ["write_sdpa", "format_sdpa"]


def format_sdpa(problem: SdpProblem, comment: str = "") -> str:
    n_diag = problem.n_nonneg + 2 * problem.n_free
    blocks = list(problem.psd_dims)
    diag_block = None
    if n_diag:
        blocks.append(-n_diag)
        diag_block = len(blocks)  # 1-based

    def diag_positions(entry):
        """Yield (position, sign) pairs inside the diagonal block (0-based)."""
        kind = entry[0]
        if kind == "nonneg":
            yield entry[1], 1.0
        elif kind == "free":
            base = problem.n_nonneg + 2 * entry[1]
            yield base, 1.0
            yield base + 1, -1.0

    lines: list[str] = []
    if comment:
        for row in comment.splitlines():
            lines.append(f'"{row}')
    lines.append(f"{problem.n_rows} = mDIM")
    lines.append(f"{len(blocks)} = nBLOCK")
    lines.append("(" + ", ".join(str(b) for b in blocks) + ") = bLOCKsTRUCT")
    lines.append(" ".join(_fmt(v) for v in problem.eq_rhs) if problem.eq_rhs else "")

    def emit(mat_no: int, coeffs, scale: float) -> None:
        for entry, coeff in sorted(coeffs.items(), key=lambda kv: repr(kv[0])):
            value = scale * coeff
            if value == 0.0:
                continue
            if entry[0] == "psd":
                _, b, i, j = entry
                lines.append(f"{mat_no} {b + 1} {i + 1} {j + 1} {_fmt(value)}")
            else:
                for pos, sign in diag_positions(entry):
                    lines.append(
                        f"{mat_no} {diag_block} {pos + 1} {pos + 1} {_fmt(sign * value)}"
                    )

    emit(0, problem.objective, -1.0)
    for r, row in enumerate(problem.eq_rows):
        emit(r + 1, row, 1.0)
    return "\n".join(lines) + "\n"


def write_sdpa(problem: SdpProblem, path, comment: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(format_sdpa(problem, comment=comment))


def _fmt(value: float) -> str:
    return format(float(value), ".12g")
