"""Regenerate the codec fixtures with Pillow (libjpeg) as the reference."""
import io
import math
from pathlib import Path

from PIL import Image

HERE = Path(__file__).parent


def scene(size=64):
    img = Image.new("RGB", (size, size))
    px = img.load()
    for y in range(size):
        for x in range(size):
            r = int(127 + 100 * math.sin(x / 7.0) * math.cos(y / 11.0))
            g = int(255 * x / (size - 1))
            b = 220 if (x // 16 + y // 16) % 2 else 30
            px[x, y] = (r, g, b)
    return img


def main():
    src = scene()
    src.save(HERE / "scene64.png")

    src.save(HERE / "scene64_q90_444.jpg", quality=90, subsampling=0)
    ref = Image.open(HERE / "scene64_q90_444.jpg").convert("RGB")
    (HERE / "scene64_q90_444.rgb").write_bytes(ref.tobytes())

    buf = io.BytesIO()
    src.save(buf, format="JPEG", quality=60, subsampling=2)
    rt = Image.open(io.BytesIO(buf.getvalue())).convert("RGB")
    (HERE / "scene64_q60_roundtrip.rgb").write_bytes(rt.tobytes())

    Image.new("RGB", (1, 1), (255, 255, 255)).save(HERE / "white1.png")
    Image.new("L", (3, 2), 10).save(HERE / "gray10.png")


if __name__ == "__main__":
    main()
