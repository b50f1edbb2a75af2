#!/usr/bin/env python3
"""Closed-form 2-bus power flow used to pin sweep-solver results.

Source bus at V1, one series branch z = r + jx, one constant-power load
P + jQ (per unit, consumption). |V2|^2 = u solves

    u^2 + u * (2*(P*r + Q*x) - |V1|^2) + (P^2 + Q^2) * |z|^2 = 0

(take the electrically stable high-voltage root).  Branch loss is
(P^2 + Q^2) / u * r.  Values printed here are frozen into
tests/unit/powerflow_test.cpp.
"""

from decimal import Decimal, getcontext

getcontext().prec = 40


def solve(v1, r, x, p, q):
    v1, r, x, p, q = map(Decimal, map(str, (v1, r, x, p, q)))
    b = 2 * (p * r + q * x) - v1 * v1
    c = (p * p + q * q) * (r * r + x * x)
    disc = b * b - 4 * c
    u = (-b + disc.sqrt()) / 2
    v2 = u.sqrt()
    loss = (p * p + q * q) / u * r
    return v2, loss


def main():
    cases = [
        ("P=0.1 Q=0",    1.0, 0.01, 0.01, 0.1, 0.0),
        ("P=0.1 Q=0.05", 1.0, 0.01, 0.01, 0.1, 0.05),
        ("P=0.3 Q=0.1",  1.0, 0.02, 0.04, 0.3, 0.1),
    ]
    for label, v1, r, x, p, q in cases:
        v2, loss = solve(v1, r, x, p, q)
        print(f"{label}: v2 = {+v2:.15f}  loss_pu = {+loss:.15f}")


if __name__ == "__main__":
    main()
