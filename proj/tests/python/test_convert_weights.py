"""Converter round trip: a torch state dict in the reference AdaIN layout
must reconstruct images through the C++ stylizer as it does in torch."""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

torch = pytest.importorskip("torch")
cv2 = pytest.importorskip("cv2")
nn = torch.nn

ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(ROOT / "tools"))
import convert_adain_weights as conv  # noqa: E402

BINARY = os.environ.get("STYLEAUG_BIN", str(ROOT / "build" / "styleaug"))


def pad_conv(cin, cout):
    return [nn.ReflectionPad2d((1, 1, 1, 1)), nn.Conv2d(cin, cout, (3, 3))]


def reference_vgg():
    layers = [nn.Conv2d(3, 3, (1, 1))]
    layers += pad_conv(3, 64) + [nn.ReLU()]
    layers += pad_conv(64, 64) + [nn.ReLU(), nn.MaxPool2d((2, 2), (2, 2), (0, 0), ceil_mode=True)]
    layers += pad_conv(64, 128) + [nn.ReLU()]
    layers += pad_conv(128, 128) + [nn.ReLU(), nn.MaxPool2d((2, 2), (2, 2), (0, 0), ceil_mode=True)]
    layers += pad_conv(128, 256) + [nn.ReLU()]
    for _ in range(3):
        layers += pad_conv(256, 256) + [nn.ReLU()]
    layers += [nn.MaxPool2d((2, 2), (2, 2), (0, 0), ceil_mode=True)]
    layers += pad_conv(256, 512) + [nn.ReLU()]
    # Layers past relu4_1 exist in the reference file and must be ignored.
    layers += pad_conv(512, 512) + [nn.ReLU()]
    return nn.Sequential(*layers)


def reference_decoder():
    up = nn.Upsample(scale_factor=2, mode="nearest")
    layers = pad_conv(512, 256) + [nn.ReLU(), up]
    for _ in range(3):
        layers += pad_conv(256, 256) + [nn.ReLU()]
    layers += pad_conv(256, 128) + [nn.ReLU(), up]
    layers += pad_conv(128, 128) + [nn.ReLU()]
    layers += pad_conv(128, 64) + [nn.ReLU(), up]
    layers += pad_conv(64, 64) + [nn.ReLU()]
    layers += pad_conv(64, 3)
    return nn.Sequential(*layers)


def he_init(net, seed):
    g = torch.Generator().manual_seed(seed)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                m.bias.copy_(torch.randn(m.bias.shape, generator=g) * 0.05)
    return net


def calibrate(vgg, dec, x):
    """Rescales the last decoder conv so outputs on x spread around 0.5."""
    with torch.no_grad():
        y = dec(vgg[:31](x))
        m, s = y.mean(), y.std()
        last = dec[-1]
        last.weight.mul_(0.2 / s)
        last.bias.copy_((last.bias - m) * 0.2 / s + 0.5)


def content_image(res):
    return np.random.default_rng(0).integers(0, 256, size=(res, res, 3), dtype=np.uint8)


def as_tensor(rgb):
    return torch.from_numpy(rgb.astype(np.float32) / 255.0).permute(2, 0, 1)[None]


@pytest.fixture()
def converted(tmp_path):
    vgg, dec = he_init(reference_vgg(), 1), he_init(reference_decoder(), 2)
    calibrate(vgg, dec, as_tensor(content_image(16)))
    torch.save(vgg.state_dict(), tmp_path / "vgg.pth")
    torch.save(dec.state_dict(), tmp_path / "decoder.pth")
    out = tmp_path / "w.styw"
    assert conv.main(["--vgg", str(tmp_path / "vgg.pth"), "--decoder", str(tmp_path / "decoder.pth"),
                      "--out", str(out)]) == 0
    return vgg, dec, out


def test_reconstruction_matches_torch(tmp_path, converted):
    if not Path(BINARY).exists():
        pytest.skip(f"styleaug binary not built: {BINARY}")
    vgg, dec, weights = converted
    res = 16
    content = tmp_path / "content"
    content.mkdir()
    rgb = content_image(res)
    cv2.imwrite(str(content / "a.png"), rgb[:, :, ::-1])

    run = subprocess.run([BINARY, "stylize-preview", "--out-dir", str(tmp_path / "out"), "--content-dir",
                          str(content), "--in-batch", "--weights", str(weights), "--resolution", str(res),
                          "--alpha", "0"], capture_output=True, text=True)
    assert run.returncode == 0, run.stderr
    grid = cv2.imread(str(tmp_path / "out" / "previews" / "preview.png"))[:, :, ::-1]
    cpp = grid[0:res, res:2 * res].astype(int)

    with torch.no_grad():
        y = dec(vgg[:31](as_tensor(rgb))).clamp(0, 1)[0].permute(1, 2, 0).numpy()
    ref = np.rint(y * 255.0).astype(int)
    interior = np.mean((y > 0.01) & (y < 0.99))
    assert interior > 0.2, "reference output saturated; the comparison would be vacuous"
    assert np.abs(cpp - ref).max() <= 1
    assert np.mean(cpp == ref) > 0.95


def test_header_and_names(converted):
    _, _, weights = converted
    data = Path(weights).read_bytes()
    assert data[:8] == conv.MAGIC
    assert b"encoder.20.weight" in data and b"decoder.19.bias" in data
    assert b"encoder.22.weight" not in data


def test_rejects_wrong_shapes(tmp_path):
    vgg = reference_vgg()
    dec = reference_decoder()
    dec[1] = nn.Conv2d(256, 256, (3, 3))
    torch.save(vgg.state_dict(), tmp_path / "vgg.pth")
    torch.save(dec.state_dict(), tmp_path / "decoder.pth")
    rc = conv.main(["--vgg", str(tmp_path / "vgg.pth"), "--decoder", str(tmp_path / "decoder.pth"),
                    "--out", str(tmp_path / "w.styw")])
    assert rc == 1
    assert not (tmp_path / "w.styw").exists()


def test_descriptor_layout_counts():
    enc, enc_slots = conv.build(conv.ENCODER_LAYOUT, conv.ENCODER_CONVS)
    dec, dec_slots = conv.build(conv.DECODER_LAYOUT, conv.DECODER_CONVS)
    assert len(enc) == 22 and len(dec) == 20
    assert [s[0] for s in enc_slots] == [0, 1, 3, 6, 8, 11, 13, 15, 17, 20]
    assert [s[0] for s in dec_slots] == [0, 3, 5, 7, 9, 12, 14, 17, 19]
    assert enc[0] == "conv1x1 3->3 stride1 pad0 zero bias"
