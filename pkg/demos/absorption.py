"""Inspect versus overwrite: whether Q survives into the terminal state.

Overwriting drives every latent to the same terminal state, so memory of
the run carries nothing about Q. Inspecting identifies Q, which forces the
memory to keep at least log2 |Q| bits.
"""

from bridgegap.bench import make_inspect_overwrite
from bridgegap.core import Policy
from bridgegap.gap import absorption_report

inst = make_inspect_overwrite(4)
for label, action in (("overwrite", 0), ("inspect", 1)):
    r = absorption_report(inst.model, Policy.open_loop([action]), inst.q, inst.quotients["V"])
    print(
        f"{label:<9} I(Q;V)={r.i_q_v:.3f} H(Q|M)={r.h_q_given_m:.3f} "
        f"identification={r.identification} collapse={r.overwrite_collapse} memory classes={r.memory_classes}"
    )
