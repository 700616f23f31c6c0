"""Compiled split search, tree growth and prediction.

Feature values reach the builders as small integer codes (see
``tree.Binner``), stored feature-major as ``codes[feature, row]`` with -1
for missing. Numeric splits send ``code <= t`` left; categorical splits
open one child per code present in the node. Missing rows follow the
child that holds the most rows.

Trees are flat arrays. ``child_ids[child_start[i] + j]`` is the j-th child
of node i: for numeric splits j=0 is the ``x <= threshold`` side, for
categorical splits j is the category code (-1 where the code was absent
in training).
"""
import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _next_u64(state):
    # splitmix64
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _rand_below(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@njit(cache=True, nogil=True)
def _gini_mass(n, yes):
    # n * gini(yes / n); zero for empty nodes
    if n <= 0.0:
        return 0.0
    no = n - yes
    return n - (yes * yes + no * no) / n


@njit(cache=True, nogil=True)
def _better(score, f, t, best_score, best_f, best_t, eps):
    if best_f < 0:
        return True
    if score < best_score - eps:
        return True
    if score <= best_score + eps:
        if f < best_f:
            return True
        if f == best_f and t < best_t:
            return True
    return False


@njit(cache=True, nogil=True)
def _candidate_features(pool, mtry, state, order):
    # Fisher-Yates shuffle of the pool into `order` when sampling; the caller
    # walks `order` until it has seen `mtry` non-constant features.
    m = pool.size
    for i in range(m):
        order[i] = pool[i]
    if mtry >= m:
        return
    for i in range(m - 1):
        j = i + _rand_below(state, m - i)
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp


@njit(cache=True, nogil=True)
def _partition(idx, start, end, codes_f, is_cat, thr, n_groups, default_group, buf, group):
    # stable counting-sort of idx[start:end] into child groups; returns counts
    counts = np.zeros(n_groups, np.int64)
    for k in range(start, end):
        c = codes_f[idx[k]]
        if c < 0:
            g = default_group
        elif is_cat:
            g = group[c]
        else:
            g = 0 if c <= thr else 1
        buf[k - start] = g
        counts[g] += 1
    offs = np.zeros(n_groups + 1, np.int64)
    for g in range(n_groups):
        offs[g + 1] = offs[g] + counts[g]
    pos = offs.copy()
    tmp = idx[start:end].copy()
    for k in range(end - start):
        g = buf[k]
        idx[start + pos[g]] = tmp[k]
        pos[g] += 1
    return offs


@njit(cache=True, nogil=True)
def build_classifier(codes, n_codes, is_cat, cuts, y, w, rows, pool,
                     max_depth, min_node, cp, mtry, seed):
    """Grow a Gini tree; returns flat node arrays.

    ``w`` holds per-row weights (bootstrap multiplicities); ``rows`` lists the
    rows with positive weight.
    """
    n = rows.size
    p_pool = pool.size
    max_codes = 2
    for f in range(n_codes.size):
        if n_codes[f] > max_codes:
            max_codes = n_codes[f]
    slots = 2
    for f in range(n_codes.size):
        if is_cat[f] and n_codes[f] > slots:
            slots = n_codes[f]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, np.int32)
    threshold = np.zeros(cap, np.float64)
    thr_code = np.full(cap, -1, np.int32)
    child_start = np.zeros(cap, np.int32)
    n_children = np.zeros(cap, np.int32)
    default_child = np.full(cap, -1, np.int32)
    n_yes = np.zeros(cap, np.float64)
    n_tot = np.zeros(cap, np.float64)
    depth_arr = np.zeros(cap, np.int32)
    child_ids = np.full(cap * slots // 2 + slots, -1, np.int32)
    n_child_slots = 0

    idx = rows.copy()
    buf = np.zeros(n, np.int64)
    st_node = np.zeros(cap, np.int64)
    st_start = np.zeros(cap, np.int64)
    st_end = np.zeros(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    sp = 1
    n_nodes = 1

    state = np.zeros(1, np.uint64)
    state[0] = np.uint64(seed)
    order = np.zeros(p_pool, np.int64)
    cnt = np.zeros(max_codes, np.float64)
    yes = np.zeros(max_codes, np.float64)
    group = np.zeros(max_codes, np.int64)

    root_mass = -1.0
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        d = depth_arr[node]
        W = 0.0
        Y = 0.0
        for k in range(start, end):
            r = idx[k]
            W += w[r]
            Y += w[r] * y[r]
        n_yes[node] = Y
        n_tot[node] = W
        parent_mass = _gini_mass(W, Y)
        if root_mass < 0.0:
            root_mass = parent_mass
        if d >= max_depth or W < min_node or Y <= 0.0 or Y >= W:
            continue
        eps = 1e-12 * W

        _candidate_features(pool, mtry, state, order)
        best_f = -1
        best_t = -1
        best_score = np.inf
        visited = 0
        for oi in range(p_pool):
            if mtry < p_pool and visited >= mtry:
                break
            f = order[oi]
            nc = n_codes[f]
            for c in range(nc):
                cnt[c] = 0.0
                yes[c] = 0.0
            mc = 0.0
            my = 0.0
            cf = codes[f]
            for k in range(start, end):
                r = idx[k]
                c = cf[r]
                if c < 0:
                    mc += w[r]
                    my += w[r] * y[r]
                else:
                    cnt[c] += w[r]
                    yes[c] += w[r] * y[r]
            present = 0
            for c in range(nc):
                if cnt[c] > 0.0:
                    present += 1
            if present < 2:
                continue
            visited += 1
            if is_cat[f]:
                big = -1
                for c in range(nc):
                    if cnt[c] > 0.0 and (big < 0 or cnt[c] > cnt[big]):
                        big = c
                score = 0.0
                for c in range(nc):
                    if cnt[c] > 0.0:
                        if c == big:
                            score += _gini_mass(cnt[c] + mc, yes[c] + my)
                        else:
                            score += _gini_mass(cnt[c], yes[c])
                if _better(score, f, -1, best_score, best_f, best_t, eps):
                    best_score = score
                    best_f = f
                    best_t = -1
            else:
                nm = W - mc
                ym = Y - my
                L = 0.0
                LY = 0.0
                for t in range(nc - 1):
                    if cnt[t] <= 0.0:
                        continue
                    L += cnt[t]
                    LY += yes[t]
                    R = nm - L
                    if R <= 0.0:
                        break
                    RY = ym - LY
                    if L >= R:
                        score = _gini_mass(L + mc, LY + my) + _gini_mass(R, RY)
                    else:
                        score = _gini_mass(L, LY) + _gini_mass(R + mc, RY + my)
                    if _better(score, f, t, best_score, best_f, best_t, eps):
                        best_score = score
                        best_f = f
                        best_t = t
        if best_f < 0:
            continue
        improvement = parent_mass - best_score
        if improvement < cp * root_mass - eps:
            continue

        f = best_f
        cf = codes[f]
        if is_cat[f]:
            nc = n_codes[f]
            for c in range(nc):
                cnt[c] = 0.0
            for k in range(start, end):
                c = cf[idx[k]]
                if c >= 0:
                    cnt[c] += w[idx[k]]
            n_groups = 0
            big = -1
            for c in range(nc):
                if cnt[c] > 0.0:
                    group[c] = n_groups
                    n_groups += 1
                    if big < 0 or cnt[c] > cnt[big]:
                        big = c
                else:
                    group[c] = -1
            default_group = group[big]
            offs = _partition(idx, start, end, cf, True, -1, n_groups, default_group, buf, group)
            child_start[node] = n_child_slots
            n_children[node] = nc
            for c in range(nc):
                if group[c] >= 0:
                    child_ids[n_child_slots + c] = n_nodes + group[c]
                else:
                    child_ids[n_child_slots + c] = -1
            n_child_slots += nc
            default_child[node] = n_nodes + default_group
        else:
            L = 0.0
            R = 0.0
            for k in range(start, end):
                c = cf[idx[k]]
                if c >= 0:
                    if c <= best_t:
                        L += w[idx[k]]
                    else:
                        R += w[idx[k]]
            default_group = 0 if L >= R else 1
            n_groups = 2
            offs = _partition(idx, start, end, cf, False, best_t, 2, default_group, buf, group)
            child_start[node] = n_child_slots
            n_children[node] = 2
            child_ids[n_child_slots] = n_nodes
            child_ids[n_child_slots + 1] = n_nodes + 1
            n_child_slots += 2
            default_child[node] = n_nodes + default_group
            thr_code[node] = best_t
            threshold[node] = cuts[f, best_t]
        feature[node] = f
        first = n_nodes
        n_nodes += n_groups
        for g in range(n_groups - 1, -1, -1):
            child = first + g
            depth_arr[child] = d + 1
            st_node[sp] = child
            st_start[sp] = start + offs[g]
            st_end[sp] = start + offs[g + 1]
            sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), thr_code[:n_nodes].copy(),
            child_start[:n_nodes].copy(), n_children[:n_nodes].copy(),
            child_ids[:n_child_slots].copy(), default_child[:n_nodes].copy(),
            n_yes[:n_nodes].copy(), n_tot[:n_nodes].copy(), depth_arr[:n_nodes].copy())


@njit(cache=True, nogil=True)
def build_regressor(codes, n_codes, is_cat, cuts, g, h, pool, max_depth, min_node,
                    min_gain, min_child_weight, l2, mtry, seed):
    """Grow a second-order boosting tree on gradients ``g`` and hessians ``h``.

    Split gain is ``GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2)`` (halved);
    leaves carry ``-G/(H+l2)``. Returns node arrays plus the leaf id of
    every training row.
    """
    n = g.size
    p_pool = pool.size
    max_codes = 2
    for f in range(n_codes.size):
        if n_codes[f] > max_codes:
            max_codes = n_codes[f]
    slots = 2
    for f in range(n_codes.size):
        if is_cat[f] and n_codes[f] > slots:
            slots = n_codes[f]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, np.int32)
    threshold = np.zeros(cap, np.float64)
    thr_code = np.full(cap, -1, np.int32)
    child_start = np.zeros(cap, np.int32)
    n_children = np.zeros(cap, np.int32)
    default_child = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)
    gain = np.zeros(cap, np.float64)
    cover = np.zeros(cap, np.float64)
    depth_arr = np.zeros(cap, np.int32)
    child_ids = np.full(cap * slots // 2 + slots, -1, np.int32)
    n_child_slots = 0
    leaf_of = np.zeros(n, np.int32)

    idx = np.arange(n)
    buf = np.zeros(n, np.int64)
    st_node = np.zeros(cap, np.int64)
    st_start = np.zeros(cap, np.int64)
    st_end = np.zeros(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    sp = 1
    n_nodes = 1

    state = np.zeros(1, np.uint64)
    state[0] = np.uint64(seed)
    order = np.zeros(p_pool, np.int64)
    cg = np.zeros(max_codes, np.float64)
    ch = np.zeros(max_codes, np.float64)
    cn = np.zeros(max_codes, np.float64)
    group = np.zeros(max_codes, np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        d = depth_arr[node]
        G = 0.0
        H = 0.0
        for k in range(start, end):
            G += g[idx[k]]
            H += h[idx[k]]
        value[node] = -G / (H + l2)
        cover[node] = end - start
        parent = G * G / (H + l2)
        is_leaf = d >= max_depth or (end - start) < min_node or (end - start) < 2
        best_f = -1
        best_t = -1
        best_gain = -np.inf
        if not is_leaf:
            _candidate_features(pool, mtry, state, order)
            visited = 0
            for oi in range(p_pool):
                if mtry < p_pool and visited >= mtry:
                    break
                f = order[oi]
                nc = n_codes[f]
                for c in range(nc):
                    cg[c] = 0.0
                    ch[c] = 0.0
                    cn[c] = 0.0
                mg = 0.0
                mh = 0.0
                mn = 0.0
                cf = codes[f]
                for k in range(start, end):
                    r = idx[k]
                    c = cf[r]
                    if c < 0:
                        mg += g[r]
                        mh += h[r]
                        mn += 1.0
                    else:
                        cg[c] += g[r]
                        ch[c] += h[r]
                        cn[c] += 1.0
                present = 0
                for c in range(nc):
                    if cn[c] > 0.0:
                        present += 1
                if present < 2:
                    continue
                visited += 1
                if is_cat[f]:
                    big = -1
                    for c in range(nc):
                        if cn[c] > 0.0 and (big < 0 or cn[c] > cn[big]):
                            big = c
                    score = 0.0
                    ok = True
                    for c in range(nc):
                        if cn[c] > 0.0:
                            gg = cg[c]
                            hh = ch[c]
                            if c == big:
                                gg += mg
                                hh += mh
                            if hh < min_child_weight:
                                ok = False
                            score += gg * gg / (hh + l2)
                    if ok:
                        gn = 0.5 * (score - parent)
                        if gn > best_gain + 1e-12:
                            best_gain = gn
                            best_f = f
                            best_t = -1
                else:
                    LG = 0.0
                    LH = 0.0
                    LN = 0.0
                    tn = (end - start) - mn
                    for t in range(nc - 1):
                        if cn[t] <= 0.0:
                            continue
                        LG += cg[t]
                        LH += ch[t]
                        LN += cn[t]
                        RN = tn - LN
                        if RN <= 0.0:
                            break
                        RG = G - mg - LG
                        RH = H - mh - LH
                        if LN >= RN:
                            gl = LG + mg
                            hl = LH + mh
                            gr = RG
                            hr = RH
                        else:
                            gl = LG
                            hl = LH
                            gr = RG + mg
                            hr = RH + mh
                        if hl < min_child_weight or hr < min_child_weight:
                            continue
                        gn = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent)
                        if gn > best_gain + 1e-12:
                            best_gain = gn
                            best_f = f
                            best_t = t
            if best_f < 0 or best_gain <= min_gain:
                is_leaf = True
        if is_leaf:
            for k in range(start, end):
                leaf_of[idx[k]] = node
            continue

        f = best_f
        cf = codes[f]
        gain[node] = best_gain
        if is_cat[f]:
            nc = n_codes[f]
            for c in range(nc):
                cn[c] = 0.0
            for k in range(start, end):
                c = cf[idx[k]]
                if c >= 0:
                    cn[c] += 1.0
            n_groups = 0
            big = -1
            for c in range(nc):
                if cn[c] > 0.0:
                    group[c] = n_groups
                    n_groups += 1
                    if big < 0 or cn[c] > cn[big]:
                        big = c
                else:
                    group[c] = -1
            default_group = group[big]
            offs = _partition(idx, start, end, cf, True, -1, n_groups, default_group, buf, group)
            child_start[node] = n_child_slots
            n_children[node] = nc
            for c in range(nc):
                child_ids[n_child_slots + c] = n_nodes + group[c] if group[c] >= 0 else -1
            n_child_slots += nc
        else:
            L = 0
            R = 0
            for k in range(start, end):
                c = cf[idx[k]]
                if c >= 0:
                    if c <= best_t:
                        L += 1
                    else:
                        R += 1
            default_group = 0 if L >= R else 1
            n_groups = 2
            offs = _partition(idx, start, end, cf, False, best_t, 2, default_group, buf, group)
            child_start[node] = n_child_slots
            n_children[node] = 2
            child_ids[n_child_slots] = n_nodes
            child_ids[n_child_slots + 1] = n_nodes + 1
            n_child_slots += 2
            thr_code[node] = best_t
            threshold[node] = cuts[f, best_t]
        default_child[node] = n_nodes + default_group
        feature[node] = f
        first = n_nodes
        n_nodes += n_groups
        for gi in range(n_groups - 1, -1, -1):
            child = first + gi
            depth_arr[child] = d + 1
            st_node[sp] = child
            st_start[sp] = start + offs[gi]
            st_end[sp] = start + offs[gi + 1]
            sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), thr_code[:n_nodes].copy(),
            child_start[:n_nodes].copy(), n_children[:n_nodes].copy(),
            child_ids[:n_child_slots].copy(), default_child[:n_nodes].copy(),
            value[:n_nodes].copy(), gain[:n_nodes].copy(), cover[:n_nodes].copy(),
            depth_arr[:n_nodes].copy(), leaf_of)


@njit(cache=True, nogil=True)
def _route(X, i, node, feature, threshold, is_cat, child_start, n_children, child_ids,
           default_child, node_off, slot_off):
    # walk one tree from `node` (global id) to a leaf; returns the global leaf id
    f = feature[node]
    while f >= 0:
        v = X[i, f]
        cs = slot_off + child_start[node]
        if is_cat[f]:
            nxt = -1
            if v == v:
                c = int(v)
                if c >= 0 and c < n_children[node] and v == c:
                    nxt = child_ids[cs + c]
        elif v <= threshold[node]:
            nxt = child_ids[cs]
        elif v > threshold[node]:
            nxt = child_ids[cs + 1]
        else:
            nxt = -1
        if nxt < 0:
            nxt = default_child[node]
        node = node_off + nxt
        f = feature[node]
    return node


@njit(cache=True, nogil=True)
def predict_packed(X, is_cat, feature, threshold, child_start, n_children, child_ids,
                   default_child, value, node_offsets, slot_offsets):
    """Sum over trees of the leaf value reached by each row."""
    n = X.shape[0]
    T = node_offsets.size
    out = np.zeros(n, np.float64)
    # tree-outer keeps one tree hot in cache; each row still sums trees in order
    for t in range(T):
        a = node_offsets[t]
        b = slot_offsets[t]
        for i in range(n):
            leaf = _route(X, i, a, feature, threshold, is_cat, child_start, n_children,
                          child_ids, default_child, a, b)
            out[i] += value[leaf]
    return out


@njit(cache=True, nogil=True)
def apply_packed(X, is_cat, feature, threshold, child_start, n_children, child_ids,
                 default_child, node_offsets, slot_offsets):
    """Local leaf id per (row, tree)."""
    n = X.shape[0]
    T = node_offsets.size
    out = np.zeros((n, T), np.int32)
    for t in range(T):
        a = node_offsets[t]
        b = slot_offsets[t]
        for i in range(n):
            leaf = _route(X, i, a, feature, threshold, is_cat, child_start, n_children,
                          child_ids, default_child, a, b)
            out[i, t] = leaf - a
    return out
