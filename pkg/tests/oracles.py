"""Independent reference implementations used as test oracles.

None of these import the code under test beyond plain data types; each one
recomputes its answer the slow, obvious way.
"""
import hashlib
import struct


def blake_block_digest(parent_hex, height, view, payload):
    def fld(b):
        return struct.pack(">I", len(b)) + b

    raw = b"HSB1" + fld(bytes.fromhex(parent_hex)) + fld(height.to_bytes(8, "big")) \
        + fld(view.to_bytes(8, "big")) + fld(payload)
    return hashlib.blake2b(raw, digest_size=16).hexdigest()


def ancestor_set(parents, node):
    """Every node on the path from ``node`` to the root, ``node`` included."""
    out = {node}
    while parents.get(node) is not None:
        node = parents[node]
        out.add(node)
    return out


def tree_conflicts(parents, a, b):
    return a not in ancestor_set(parents, b) and b not in ancestor_set(parents, a)


def hot_by_definition(locks, fresh, parents, quorum, credited=0):
    """The hot-state definition evaluated literally over explicit ancestor sets."""
    if fresh:
        return False
    distinct = set(locks)
    if not any(tree_conflicts(parents, x, y) for x in distinct for y in distinct if x != y):
        return False
    for b in distinct:
        could_vote = [lk for lk in locks if not tree_conflicts(parents, lk, b)]
        if len(could_vote) + credited >= quorum:
            return False
    return True


def first_run_of_ones(bits, tt):
    """1-based index at which ``tt`` consecutive ones have been seen, else None."""
    text = "".join("1" if b else "0" for b in bits)
    pos = text.find("1" * tt)
    return None if pos < 0 else pos + tt


def has_hot_cycle(vertices, edges, hot):
    """Iterative DFS with back-edge detection restricted to hot vertices."""
    adj = {v: [w for w in edges.get(v, ()) if hot[w]] for v in vertices if hot[v]}
    WHITE, GREY, BLACK = 0, 1, 2
    colour = {v: WHITE for v in adj}
    for root in adj:
        if colour[root] != WHITE:
            continue
        stack = [(root, iter(adj[root]))]
        colour[root] = GREY
        while stack:
            v, it = stack[-1]
            for w in it:
                if colour[w] == GREY:
                    return True
                if colour[w] == WHITE:
                    colour[w] = GREY
                    stack.append((w, iter(adj[w])))
                    break
            else:
                colour[v] = BLACK
                stack.pop()
    return False
