import json
import os

import numpy as np
import pytest

from mirrorfield.harness import io
from mirrorfield.harness.checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    ConfigMismatchError,
    decodeCheckpoint,
    encodeCheckpoint,
    loadCheckpoint,
    saveCheckpoint,
)
from mirrorfield.harness.cli import (
    UsageError,
    main,
    parseMirror,
    parsePlacement,
    parseResolution,
    parseRough,
)
from mirrorfield.harness.frames import REPORT_FILE, loadCameras, renderFrames, saveFrames
from mirrorfield.harness.metrics import (
    EmptyMaskError,
    compareView,
    mirrorDepthMae,
    psnr,
    ssim,
)
from mirrorfield.scenegen.dataset import saveDataset
from mirrorfield.train.config import saveTrainConfig
from mirrorfield.train.optim import OptimConfig


class TestIo:
    def test_pngKeepsEightBitValues(self, tmp_path):
        image = np.arange(4 * 5 * 3).reshape(4, 5, 3) / 255.0
        path = str(tmp_path / "image.png")
        io.writePng(path, image)
        np.testing.assert_allclose(io.readPng(path), image, atol=1e-12)

    def test_grayPngReadsAsTwoDimensions(self, tmp_path):
        path = str(tmp_path / "mask.png")
        io.writePng(path, np.eye(3, dtype=np.uint8) * 255)
        np.testing.assert_array_equal(io.readPng(path), np.eye(3))

    def test_floatBufferKeepsFloat32Values(self, tmp_path):
        values = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
        values[0, 0] = np.inf
        path = str(tmp_path / "depth.f32")
        io.writeFloatBuffer(path, values)
        np.testing.assert_array_equal(io.readFloatBuffer(path), values)
        normals = np.ones((2, 2, 3), dtype=np.float32)
        io.writeFloatBuffer(path, normals)
        assert io.readFloatBuffer(path).shape == (2, 2, 3)

    def test_malformedFloatBuffersRaise(self, tmp_path):
        path = tmp_path / "bad.f32"
        path.write_bytes(b"NOTABUF!" + bytes(12))
        with pytest.raises(io.FloatBufferError):
            io.readFloatBuffer(str(path))
        io.writeFloatBuffer(str(path), np.zeros((2, 2)))
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(io.FloatBufferError):
            io.readFloatBuffer(str(path))

    def test_failedWritesLeaveNoFile(self, tmp_path):
        path = str(tmp_path / "out.bin")
        with pytest.raises(RuntimeError):
            with io.atomicPath(path) as tmpPath:
                with open(tmpPath, "wb") as f:
                    f.write(b"partial")
                raise RuntimeError("interrupted")
        assert os.listdir(tmp_path) == []


class TestCheckpoint:
    def test_encodingIsExact(self, field):
        checkpoint = Checkpoint.initial(field, OptimConfig(), step=7, configHash="abc")
        checkpoint.optim.firstMoment["densityGrid"][:] = 0.5
        decoded = decodeCheckpoint(encodeCheckpoint(checkpoint))
        assert decoded.step == 7
        assert decoded.configHash == "abc"
        np.testing.assert_array_equal(decoded.params.radianceGrid, field.radianceGrid)
        np.testing.assert_array_equal(decoded.optim.firstMoment["densityGrid"], 0.5)
        assert encodeCheckpoint(decoded) == encodeCheckpoint(checkpoint)

    def test_saveAndLoad(self, field, tmp_path):
        path = str(tmp_path / "field.ckpt")
        saveCheckpoint(Checkpoint.initial(field, step=3), path)
        loaded = loadCheckpoint(path)
        assert loaded.step == 3
        np.testing.assert_array_equal(loaded.params.normalGrid, field.normalGrid)

    @pytest.mark.parametrize(
        "corrupt",
        [
            lambda data: data[:5],
            lambda data: data[:-8],
            lambda data: b"BADMAGIC" + data[8:],
            lambda data: data + b"\x00",
        ],
        ids=["preamble", "array", "magic", "trailing"],
    )
    def test_corruptFilesRaise(self, field, corrupt):
        data = encodeCheckpoint(Checkpoint.initial(field))
        with pytest.raises(CheckpointFormatError):
            decodeCheckpoint(corrupt(data), "field.ckpt")

    def test_configMismatch(self, field):
        checkpoint = Checkpoint.initial(field, configHash="a" * 64)
        checkpoint.checkConfig("a" * 64)
        with pytest.raises(ConfigMismatchError):
            checkpoint.checkConfig("b" * 64)
        checkpoint.checkConfig("b" * 64, force=True)


class TestMetrics:
    def test_psnrOfIdenticalImagesIsCapped(self):
        image = np.full((4, 4, 3), 0.3)
        assert psnr(image, image) == 99.0

    def test_maskedPsnrOnlySeesTheMask(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        b[0, 0] = 1.0
        mask = np.zeros((4, 4), dtype=bool)
        mask[2:, 2:] = True
        assert psnr(a, b, mask) == 99.0
        assert psnr(a, b) == pytest.approx(10.0 * np.log10(16.0))

    def test_ssimOfIdenticalImagesIsOne(self):
        image = np.random.default_rng(0).uniform(size=(16, 16, 3))
        assert ssim(image, image) == pytest.approx(1.0)
        assert ssim(image, 1.0 - image) < 0.5

    def test_ssimNeedsElevenPixels(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 12)), np.zeros((10, 12)))

    def test_emptyMasksRaise(self):
        depth = np.zeros((3, 3))
        with pytest.raises(EmptyMaskError):
            mirrorDepthMae(depth, depth, np.zeros((3, 3), dtype=bool))
        with pytest.raises(EmptyMaskError):
            psnr(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))

    def test_mirrorDepthMae(self):
        mask = np.array([[True, False], [True, False]])
        pred = np.array([[1.0, 9.0], [2.5, 9.0]])
        gt = np.array([[1.5, 0.0], [2.0, 0.0]])
        assert mirrorDepthMae(pred, gt, mask) == pytest.approx(0.5)

    def test_viewsWithoutMirrorPixelsSkipMaskedMetrics(self):
        image = np.full((12, 12, 3), 0.5)
        metrics = compareView(0, image, image, np.zeros((12, 12), dtype=bool))
        assert metrics.psnrMask is None
        assert metrics.mirrorDepthMaeM is None
        assert metrics.maskPixels == 0


class TestParsers:
    def test_resolution(self):
        assert parseResolution("16X8") == (16, 8)
        for text in ("16", "0x4", "ax4"):
            with pytest.raises(UsageError):
                parseResolution(text)

    def test_rough(self):
        assert parseRough("4,0") == (4, 0.0)
        for text in ("0,0.1", "2.5,0.1", "4,-1", "4"):
            with pytest.raises(UsageError):
                parseRough(text)

    def test_placementWithYaw(self):
        transform = parsePlacement("1,2,3,90", "--portal")
        points = transform.applyPoints(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(points, [[1, 2, 3], [1, 3, 3]], atol=1e-12)
        with pytest.raises(UsageError):
            parsePlacement("1,2", "--portal")

    def test_mirror(self):
        mirror = parseMirror("0,0,1,0,0,2,0.5,0.25")
        np.testing.assert_allclose(mirror.normal, [0, 0, 1])
        with pytest.raises(UsageError):
            parseMirror("0,0,1,0,0,0,0.5,0.25")


@pytest.fixture
def trainedRun(tinyDataset, tinyTrainConfig, tmp_path):
    """A dataset directory and a checkpoint trained on it through the command line"""
    data = str(tmp_path / "data")
    saveDataset(tinyDataset, data)
    configPath = str(tmp_path / "train.yaml")
    saveTrainConfig(tinyTrainConfig, configPath)
    ckpt = str(tmp_path / "run.ckpt")
    status = main(["train", "--data", data, "--config", configPath, "--out", ckpt, "--steps", "2"])
    assert status == 0
    return data, ckpt


class TestCommandLine:
    def test_trainWritesTheCheckpointAndTheLog(self, trainedRun, tmp_path):
        _, ckpt = trainedRun
        assert loadCheckpoint(ckpt).step == 2
        assert os.path.exists(tmp_path / "run.csv")

    def test_trainRefusesToOverwrite(self, trainedRun, capsys):
        data, ckpt = trainedRun
        assert main(["train", "--data", data, "--out", ckpt]) == 1
        assert "mirrorfield: error:" in capsys.readouterr().err

    def test_renderWritesEveryOutput(self, trainedRun, tmp_path):
        data, ckpt = trainedRun
        out = tmp_path / "frames"
        assert main(["render", "--ckpt", ckpt, "--poses", data, "--out", str(out)]) == 0
        for suffix in (".png", "_mask.png", "_depth.f32", "_opacity.f32", "_normal.f32"):
            assert (out / f"0002{suffix}").exists()
        report = json.loads((out / REPORT_FILE).read_text())
        assert len(report["frames"]) == 3
        assert report["renderConfig"]["nSamples"] == 6

    def test_evalWritesAReport(self, trainedRun, tmp_path):
        data, ckpt = trainedRun
        out = tmp_path / "report.json"
        assert main(["eval", "--ckpt", ckpt, "--data", data, "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert len(report["views"]) == 3
        assert report["omittedMetrics"] == ["LPIPS"]
        assert report["mean"]["psnr"] > 0.0

    def test_insertMirror(self, trainedRun, tmp_path):
        data, ckpt = trainedRun
        out = tmp_path / "edited"
        argv = ["edit", "insert-mirror", "--ckpt", ckpt, "--poses", data, "--out", str(out)]
        assert main(argv + ["--mirror", "0,0,0.6,1,0,0,0.3,0.3", "--max-depth", "2"]) == 0
        report = json.loads((out / REPORT_FILE).read_text())
        assert report["edit"] == "insert-mirror"
        assert report["renderConfig"]["maxDepth"] == 2

    def test_usageErrorsExitWithTwo(self, capsys):
        assert main(["gen", "--scene", "mirror-box", "--views", "2", "--res", "8x8"]) == 2
        argv = ["render", "--ckpt", "a", "--poses", "b", "--out", "c"]
        assert main(argv + ["--samples", "x"]) == 2
        assert capsys.readouterr().err.startswith("mirrorfield: error:")

    def test_missingFilesExitWithOne(self, tmp_path):
        argv = ["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "x.ckpt")]
        assert main(argv) == 1

    def test_genWritesADataset(self, tmp_path):
        out = tmp_path / "data"
        argv = ["gen", "--scene", "two-mirrors", "--views", "2", "--res", "6x4", "--out", str(out)]
        assert main(argv + ["--depth", "2"]) == 0
        cameras = loadCameras(str(out))
        assert [(c.width, c.height) for c in cameras] == [(6, 4), (6, 4)]


def test_savedFramesRefuseToOverwrite(field, tinyDataset, smallRender, inlinePool, tmp_path):
    cameras = [tinyDataset.views[0].camera]
    frames = renderFrames(field, cameras, smallRender, inlinePool)
    path = str(tmp_path / "frames")
    saveFrames(frames, path)
    with pytest.raises(FileExistsError):
        saveFrames(frames, path)
    saveFrames(frames, path, force=True, extra={"note": "again"})
    assert io.readJson(os.path.join(path, REPORT_FILE))["note"] == "again"
