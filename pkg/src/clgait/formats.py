"""On-disk frame formats: binary PGM (8/16-bit) and ASCII PLY point clouds.

Depth PGMs store millimeters in 16-bit samples (0 = empty); silhouette
PGMs are 8-bit 0/255 masks. 16-bit PGM samples are big-endian per the
netpbm convention.
"""

import numpy as np


def write_pgm(path, image: np.ndarray):
    """Write a 2D uint8 or uint16 array as binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"write_pgm: expected 2D image, got shape {img.shape}")
    if img.dtype == np.uint8:
        maxval = 255
        payload = img.tobytes()
    elif img.dtype == np.uint16:
        maxval = 65535
        payload = img.astype(">u2").tobytes()
    else:
        raise ValueError(f"write_pgm: unsupported dtype {img.dtype}")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        f.write(payload)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    # header: magic, width, height, maxval; '#' comments allowed
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while raw[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval <= 255:
        img = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    else:
        img = np.frombuffer(raw, dtype=">u2", count=width * height, offset=pos).astype(
            np.uint16
        )
    return img.reshape(height, width)


def depth_to_pgm16(depth_m: np.ndarray) -> np.ndarray:
    """Meters -> uint16 millimeters, clipped to the representable range."""
    mm = np.round(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    return np.clip(mm, 0, 65535).astype(np.uint16)


def pgm16_to_depth(img: np.ndarray) -> np.ndarray:
    """uint16 millimeters -> float64 meters."""
    return np.asarray(img, dtype=np.float64) / 1000.0


def write_ply(path, points: np.ndarray):
    """Write an (N, 3) float array as ASCII PLY with x y z properties."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    with open(path, "w", encoding="ascii") as f:
        f.write(header)
        for x, y, z in pts:
            f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def read_ply(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        count = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: missing end_header")
            line = line.strip()
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
            if line == "end_header":
                break
        if count is None:
            raise ValueError(f"{path}: no vertex element")
        if count == 0:
            return np.zeros((0, 3), dtype=np.float64)
        data = np.loadtxt(f, dtype=np.float64, max_rows=count)
    return data.reshape(count, 3)
