#!/usr/bin/env python3
"""Rebuilds the preset systems with numpy and compares against `qctrl verify`."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np


def site_op(op, i, m):
    out = np.array([[1.0]])
    for k in range(m):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


def spin_chain(m, j=1.0):
    z = np.diag([1.0, -1.0])
    return sum(j * site_op(z, i, m) @ site_op(z, i + 1, m) for i in range(m - 1))


def ghz(m):
    v = np.zeros(2**m)
    v[0] = v[-1] = 1 / math.sqrt(2)
    return v


def neel(m, which):
    idx = sum(1 << (m - 1 - i) for i in range(m) if (i + which) % 2 == 1)
    v = np.zeros(2**m)
    v[idx] = 1.0
    return v


def parametron(kerr, g, d):
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    ad = a.T
    return kerr * ad @ ad @ a @ a + g * (ad @ ad + a @ a)


def even_cat(alpha, d):
    n = np.arange(d)
    c = np.array([2 * math.exp(-alpha**2 / 2) * alpha**k / math.sqrt(math.factorial(k)) if k % 2 == 0 else 0.0
                  for k in n])
    return c / np.linalg.norm(c)


def main():
    binary, out = sys.argv[1], Path(sys.argv[2])
    proc = subprocess.run([binary, "verify", "--out", str(out)], capture_output=True, text=True)
    print(proc.stdout, end="")
    if proc.returncode != 0:
        print(proc.stderr, file=sys.stderr)
        print("FAIL verify exited with", proc.returncode)
        return 1
    checks = {c["name"]: c for c in json.loads((out / "summary.json").read_text())["checks"]}
    failures = []

    def expect(name, ok, detail):
        print(("PASS " if ok else "FAIL ") + name + ": " + detail)
        if not ok:
            failures.append(name)

    for m in (3, 4, 5, 6):
        h = spin_chain(m)
        e = np.linalg.eigvalsh(h)
        e0 = -(m - 1)
        neel_e = [neel(m, w) @ h @ neel(m, w) for w in (0, 1)]
        ok = abs(e[0] - e0) < 1e-12 and abs(e[1] - e0) < 1e-12 and e[2] > e0 + 1 and \
            all(abs(x - e0) < 1e-12 for x in neel_e)
        expect(f"ghz-m{m} Neel degeneracy", ok and checks[f"ghz-m{m}: Neel ground-state degeneracy"]["pass"],
               f"E0={e[0]:.12f} E1={e[1]:.12f} E2={e[2]:.12f}")
        g = ghz(m)
        comm = np.linalg.norm(h @ np.outer(g, g) - np.outer(g, g) @ h)
        expect(f"ghz-m{m} GHZ commutes with drift", comm < 1e-12, f"|[H, P_ghz]| = {comm:.2e}")

    h = parametron(1.0, -4.0, 16)
    _, vecs = np.linalg.eigh(h)
    f = abs(vecs[:, 1] @ even_cat(2.0, 16)) ** 2
    cli = checks["parametron-cat: eigen-cat overlap F(k=1, cat)"]["value"]
    expect("parametron eigen-cat overlap", f > 0.99 and abs(f - cli) < 1e-9, f"numpy {f:.12f} cli {cli:.12f}")

    e = np.linalg.eigvalsh(0.5 * np.diag([1.0, -1.0]))
    expect("qubit ground state", e[0] == -0.5 and checks["qubit-multi-loss: ground state is |down>"]["pass"],
           f"E0={e[0]}")

    print("oracle:", "all checks passed" if not failures else f"{len(failures)} failed")
    return 0 if not failures else 1


if __name__ == "__main__":
    sys.exit(main())
