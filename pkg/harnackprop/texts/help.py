from __future__ import annotations

DESCRIPTION = (
    "Propagation sets, propagation paths and discrete Harnack checks for "
    "second-order operators sum_ij d_i(a_ij d_j) + sum_j b_j d_j."
)

COMMAND_HELP = {
    "check": "check (H2), the bracket rank and the barrier; reports the lifted route when (H2) fails",
    "fields": "print the fields X_j (rows of A) and the drift Y",
    "brackets": "list the bracket family up to analysis.depth and its rank at sample points",
    "lift": "describe the operator d_{n+1}^2 + L and its (H2) status",
    "reach": "flood-fill the propagation set from reach.x0",
    "path": "build a propagation path to path.target and validate it",
    "solve": "solve the Dirichlet problem with pde.boundary data",
    "measure": "discrete harmonic measure of the node at pde.node (default reach.x0)",
    "harnack": "Harnack ratio sup_K u / u(x0) over nonnegative discrete solutions",
    "absorbent": "discrete absorbent hull of reach.x0 compared with the propagation set",
}

EPILOG = (
    "exit codes: 0 ok, 2 configuration error, 3 failed precondition or hypothesis, "
    "4 numerical failure. Artifacts are written as <subcommand>.csv and "
    "<subcommand>.txt in the output directory."
)
