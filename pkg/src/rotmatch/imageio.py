"""Binary PPM (P6) and PGM (P5) reading/writing, bit-exact and dependency-free.

Images are float arrays in [0, 1], shaped [3, h, w] (RGB) or [1, h, w]
(gray). Files are written as "P6\\n{w} {h}\\n255\\n" + raw bytes.
"""

import numpy as np


def write_ppm(path, image):
    """Write [3, h, w] (P6) or [1, h, w] (P5) float image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError("write_ppm expects [1|3, h, w]")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if img.shape[0] == 3 else b"P5"
    h, w = img.shape[1], img.shape[2]
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
        f.write(data.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    """Read a binary PPM/PGM into a float32 [c, h, w] array in [0, 1]."""
    with open(path, "rb") as f:
        magic = _token(f)
        if magic == b"P6":
            channels = 3
        elif magic == b"P5":
            channels = 1
        else:
            raise ValueError(f"{path}: not a binary PPM/PGM (magic {magic!r})")
        w = int(_token(f))
        h = int(_token(f))
        maxval = int(_token(f))
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        raw = f.read(w * h * channels)
    if len(raw) != w * h * channels:
        raise ValueError(f"{path}: truncated pixel data")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, channels)
    return (img.transpose(2, 0, 1).astype(np.float32) / 255.0)


def _token(f):
    """Next whitespace-delimited token, skipping '#' comments."""
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("unexpected end of header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch
