"""Independent reference implementations used as test oracles.

These are written for clarity, not speed, and share no code with the package.
"""


def brute_force_pairs(entries, window_s=300.0, bad_threshold=0.2, eps_good=0.0):
    """Exhaustive search over every (anchor, candidate) combination.

    ``entries`` are (segment_id, patient_id, t, y) tuples. Returns a set of
    (anchor_id, partner_id, c) tuples.
    """
    out = set()
    for a in entries:
        if a[3] > eps_good:
            continue
        best = None
        for b in entries:
            if b[1] != a[1] or not b[3] > bad_threshold or not abs(b[2] - a[2]) < window_s:
                continue
            key = (abs(b[2] - a[2]), b[2])
            if best is None or key > best[0] or (key == best[0] and b[0] < best[1][0]):
                best = (key, b)
        if best is not None:
            b = best[1]
            out.add((a[0], b[0], b[3] - a[3]))
    return out


def brute_force_at_curve(records, n_bins, metric):
    """Per-bin counts and cumulative metrics by direct enumeration.

    ``records`` are (quality_y, target, prediction); ``metric`` maps a list
    of (target, prediction) to a float.
    """
    limits = [b / n_bins for b in range(1, n_bins + 1)]
    counts, values = [], []
    for i, u in enumerate(limits):
        lower = limits[i - 1] if i else None
        counts.append(sum(1 for y, _, _ in records if y <= u and (lower is None or y > lower)))
        subgroup = [(t, p) for y, t, p in records if y <= u]
        values.append(metric(subgroup) if subgroup else None)
    return limits, counts, values


def mae(pairs):
    return sum(abs(p - t) for t, p in pairs) / len(pairs)


def f1(pairs):
    tp = sum(1 for t, p in pairs if t == 1 and p == 1)
    fp = sum(1 for t, p in pairs if t != 1 and p == 1)
    fn = sum(1 for t, p in pairs if t == 1 and p != 1)
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def count_parameters(n_blocks, base, emb, z_dim, stem_k=7, block_k=3, head_out=0):
    """Closed-form parameter count of the encoder/projector/predictor stack."""
    total = base * stem_k + 2 * base
    c = base
    for i in range(n_blocks):
        out = base * 2 ** (i // 2)
        total += out * c * block_k + 2 * out      # conv1 + norm1
        total += out * out * block_k + 2 * out    # conv2 + norm2
        total += out * c + 2 * out                # shortcut + its norm
        c = out
    total += emb * c + emb                        # encoder fc
    total += z_dim * emb + z_dim + 2 * z_dim      # projector fc1 + norm
    total += z_dim * z_dim + z_dim                # projector fc2
    q = z_dim // 4
    total += q * z_dim + q + z_dim * q + z_dim    # predictor
    if head_out:
        total += head_out * emb + head_out
    return total
