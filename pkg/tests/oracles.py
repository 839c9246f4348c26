"""Independent reference implementations used by the tests.

Nothing here imports the code under test except plain data containers.
"""
from fractions import Fraction


def ring_buffer_oracle(stream, queue_size):
    """Per-class list of the last ``queue_size`` offered items (by identity index)."""
    per_class = {}
    for i, label in enumerate(stream):
        per_class.setdefault(label, []).append(i)
    return {c: items[-queue_size:] for c, items in per_class.items()}


def mof_oracle(features, labels, queue_size):
    """Re-simulate mean-of-features selection from scratch in exact arithmetic.

    At each offer the class mean is recomputed from the full history as a
    rational; candidates are the previously kept items plus the new one and
    the ``queue_size`` closest survive, newer items winning exact ties.
    """
    exact = [[Fraction(float(v)) for v in row] for row in features]
    kept, history = {}, {}
    for i, c in enumerate(labels):
        history.setdefault(c, []).append(i)
        n = len(history[c])
        mean = [sum(exact[j][k] for j in history[c]) / n for k in range(len(exact[i]))]
        cands = kept.get(c, []) + [i]
        sq = {j: sum((exact[j][k] - mean[k]) ** 2 for k in range(len(mean))) for j in cands}
        cands.sort(key=lambda j: (sq[j], -j))
        kept[c] = sorted(cands[:queue_size])
    return kept


def hand_forgetting(matrix):
    """Forgetting from first principles with exact rationals."""
    T = len(matrix)
    total = Fraction(0)
    for j in range(T - 1):
        best = max(Fraction(matrix[l][j]) for l in range(j, T - 1))
        total += best - Fraction(matrix[T - 1][j])
    return total / (T - 1)
