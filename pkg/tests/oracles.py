"""Brute-force reference implementations used as independent test oracles."""
import numpy as np

from roofmetrics.metrics import fit_quadric, quadric_distances


def pairwise_min_distance(points, chunk=1000):
    """Smallest distance between any two distinct rows, by exhaustive scan."""
    p = np.asarray(points, dtype=float)
    best = np.inf
    for i in range(0, len(p), chunk):
        block = p[i:i + chunk]
        d = np.sqrt(((block[:, None, :] - p[None, :, :]) ** 2).sum(-1))
        rows = np.arange(i, i + len(block))
        d[np.arange(len(block)), rows] = np.inf
        best = min(best, float(d.min()))
    return best


def min_distance_to(points, others, chunk=1000):
    """For each row of ``points``, distance to the closest row of ``others``."""
    p = np.asarray(points, dtype=float)
    o = np.asarray(others, dtype=float)
    out = np.empty(len(p))
    for i in range(0, len(p), chunk):
        block = p[i:i + chunk]
        out[i:i + chunk] = np.sqrt(((block[:, None, :] - o[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return out


def brute_nearest(points, queries):
    """Index of the closest point to each query (first index on ties)."""
    p = np.asarray(points, dtype=float)
    out = np.empty(len(queries), dtype=np.int64)
    for k, q in enumerate(np.asarray(queries, dtype=float)):
        d = p - q
        out[k] = np.argmin(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]))
    return out


def brute_radius(points, query, r):
    d = np.asarray(points, dtype=float) - np.asarray(query, dtype=float)
    return np.flatnonzero(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]) <= r)


def brute_c2c(compared, reference, radius=0.10, min_neighbors=6):
    """Exhaustive-search counterpart of ``c2c_distances``, one point at a time."""
    ref = np.asarray(reference, dtype=float)
    out = np.empty(len(compared))
    nearest = brute_nearest(ref, compared)
    for k, (q, g) in enumerate(zip(np.asarray(compared, dtype=float), nearest)):
        d = ref[g] - q
        out[k] = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        hood = brute_radius(ref, ref[g], radius)
        if len(hood) >= min_neighbors:
            patch = fit_quadric(ref[hood])
            dist, ok = quadric_distances(patch, ref[g], q[None, :], radius)
            if ok[0]:
                out[k] = dist[0]
    return out


def count_below(distances, d):
    return sum(1 for e in distances if e < d)


def point_in_polygon(x, y, poly):
    """Ray casting, boundary handling aside."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def point_triangle_distance(p, a, b, c):
    """Distance from p to triangle abc, by projecting and clamping onto edges."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    proj = p - np.dot(p - a, n) * n
    # barycentric test on the projected point
    v0, v1, v2 = b - a, c - a, proj - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    if v >= -1e-12 and w >= -1e-12 and v + w <= 1 + 1e-12:
        return abs(np.dot(p - a, n))

    def seg(p, s, e):
        t = np.clip(np.dot(p - s, e - s) / np.dot(e - s, e - s), 0, 1)
        return np.linalg.norm(p - (s + t * (e - s)))

    return min(seg(p, a, b), seg(p, b, c), seg(p, c, a))


def read_binary_ply_vertices(path):
    """Minimal independent reader: binary little-endian, vertex element of scalar properties first."""
    import struct

    sizes = {"char": "b", "uchar": "B", "short": "h", "ushort": "H", "int": "i", "uint": "I",
             "float": "f", "double": "d"}
    with open(path, "rb") as fh:
        assert fh.readline() == b"ply\n"
        assert fh.readline() == b"format binary_little_endian 1.0\n"
        count, props, current = None, [], None
        while True:
            line = fh.readline().decode().split()
            if line[0] == "element":
                current = line[1]
                if current == "vertex":
                    count = int(line[2])
            elif line[0] == "property" and current == "vertex":
                props.append((line[2], sizes[line[1]]))
            elif line[0] == "end_header":
                break
        fmt = "<" + "".join(t for _, t in props)
        rec = struct.Struct(fmt)
        rows = [rec.unpack(fh.read(rec.size)) for _ in range(count)]
    return [name for name, _ in props], rows
