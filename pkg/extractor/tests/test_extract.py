import numpy as np
import pytest

from dinox import cli
from dinox.extract import (
    ExtractorConfig,
    InvalidConfig,
    ModelUnavailable,
    build_model,
    extract_all,
    extract_axis,
    write_fstk,
)
from tfseg import featpipe, synthgen, volgrid


@pytest.fixture(scope="module")
def model():
    return build_model(ExtractorConfig(seed=0))


@pytest.fixture(scope="module")
def sphere64(tmp_path_factory):
    d = tmp_path_factory.mktemp("vols")
    vol, _ = synthgen.gen_sphere(64, radius=20)
    volgrid.save_volume(vol, d / "sphere.json")
    return d / "sphere.json", vol


class TestConfig:
    def test_resize_must_be_patch_multiple(self):
        with pytest.raises(InvalidConfig):
            ExtractorConfig(resize_target=70)

    def test_bad_dtype(self):
        with pytest.raises(InvalidConfig):
            ExtractorConfig(dtype="f64")

    def test_missing_checkpoint(self):
        with pytest.raises(ModelUnavailable):
            build_model(ExtractorConfig(checkpoint="/no/such.pth"))


class TestExtractAxis:
    def test_dims_follow_plan(self, model):
        vol, _ = synthgen.gen_sphere((64, 64, 32), radius=10)
        cfg = ExtractorConfig(resize_target=64, batch_size=64)
        plan = featpipe.plan_for(vol, resize_target=64, patch=8,
                                 feature_dim=384)
        for axis in range(3):
            stack = extract_axis(vol, axis, cfg, model=model, plan=plan)
            want = list(plan.target_feature_dims)
            want[axis] = vol.dims[axis]
            assert stack.dims == tuple(want)
            assert stack.feature_dim == 384

    def test_zero_slice_is_finite(self, model):
        vol = volgrid.Volume(dims=(32, 32, 32),
                             data=np.zeros((32, 32, 32), dtype=np.float32))
        cfg = ExtractorConfig(resize_target=32, batch_size=8)
        plan = featpipe.plan_for(vol, resize_target=32, patch=8,
                                 feature_dim=384)
        stack = extract_axis(vol, 0, cfg, model=model, plan=plan)
        assert np.all(np.isfinite(stack.data))

    def test_identical_slices_identical_keys(self, model):
        rng = np.random.default_rng(0)
        data = rng.random((16, 16, 16)).astype(np.float32)
        data[:, :, 3] = data[:, :, 2]  # duplicate one slice
        vol = volgrid.Volume(dims=(16, 16, 16), data=data)
        cfg = ExtractorConfig(resize_target=64, batch_size=16)
        plan = featpipe.plan_for(vol, resize_target=64, patch=8,
                                 feature_dim=384)
        stack = extract_axis(vol, 2, cfg, model=model, plan=plan)
        np.testing.assert_array_equal(stack.data[:, :, 2],
                                      stack.data[:, :, 3])


class TestExtractAll:
    def test_files_parse_in_primary_loader(self, sphere64, tmp_path):
        path, vol = sphere64
        cfg = ExtractorConfig(resize_target=64, batch_size=32)
        written = extract_all(path, tmp_path / "feat", cfg)
        assert len(written) == 4
        plan = featpipe.plan_for(vol, resize_target=64, patch=8,
                                 feature_dim=384)
        for axis, suffix in enumerate("xyz"):
            stack = volgrid.load_feature_stack(
                tmp_path / "feat" / f"sphere.{suffix}.fstk")
            assert stack.axis == axis
            want = list(plan.target_feature_dims)
            want[axis] = vol.dims[axis]
            assert stack.dims == tuple(want)
            assert stack.feature_dim == 384
        plan2 = featpipe.ExtractionPlan.from_json(
            (tmp_path / "feat" / "plan.json").read_text())
        assert plan2 == plan

    def test_merge_consumes_output(self, sphere64, tmp_path):
        path, _ = sphere64
        cfg = ExtractorConfig(resize_target=64, batch_size=32)
        extract_all(path, tmp_path / "feat", cfg)
        stacks = [volgrid.load_feature_stack(
            tmp_path / "feat" / f"sphere.{s}.fstk") for s in "xyz"]
        plan = featpipe.ExtractionPlan.from_json(
            (tmp_path / "feat" / "plan.json").read_text())
        fv = featpipe.merge_stacks(*stacks, plan.target_feature_dims)
        assert fv.feature_dim == 384
        assert fv.source_dims == (64, 64, 64)

    def test_deterministic_reruns(self, sphere64, tmp_path):
        path, _ = sphere64
        cfg = ExtractorConfig(resize_target=64, batch_size=32, seed=7)
        extract_all(path, tmp_path / "a", cfg)
        extract_all(path, tmp_path / "b", cfg)
        for suffix in "xyz":
            a = (tmp_path / "a" / f"sphere.{suffix}.fstk").read_bytes()
            b = (tmp_path / "b" / f"sphere.{suffix}.fstk").read_bytes()
            assert a == b

    def test_f16_payload_half_of_f32(self, model, tmp_path):
        vol = volgrid.Volume(dims=(16, 16, 16),
                             data=np.zeros((16, 16, 16), dtype=np.float32))
        cfg32 = ExtractorConfig(resize_target=32, batch_size=8)
        plan = featpipe.plan_for(vol, resize_target=32, patch=8,
                                 feature_dim=384)
        stack = extract_axis(vol, 0, cfg32, model=model, plan=plan)
        write_fstk(stack, tmp_path / "full.fstk")
        from dataclasses import replace
        write_fstk(replace(stack, dtype="f16"), tmp_path / "half.fstk")
        import struct
        header = 4 + struct.calcsize("<IB3IIB7x")
        full = (tmp_path / "full.fstk").stat().st_size - header
        half = (tmp_path / "half.fstk").stat().st_size - header
        assert half * 2 == full

    def test_missing_out_dir_created(self, sphere64, tmp_path):
        path, _ = sphere64
        cfg = ExtractorConfig(resize_target=64, batch_size=32)
        extract_all(path, tmp_path / "deep" / "nested", cfg)
        assert (tmp_path / "deep" / "nested" / "plan.json").exists()


class TestCli:
    def test_end_to_end(self, sphere64, tmp_path):
        path, _ = sphere64
        rc = cli.main(["--volume", str(path), "--out",
                       str(tmp_path / "out"), "--resize", "64",
                       "--batch", "32"])
        assert rc == 0
        stack = volgrid.load_feature_stack(tmp_path / "out" / "sphere.x.fstk")
        assert stack.feature_dim == 384

    def test_missing_volume_is_data_error(self, tmp_path):
        rc = cli.main(["--volume", str(tmp_path / "no.json"),
                       "--out", str(tmp_path / "out")])
        assert rc == 2

    def test_bad_resize_is_usage_error(self, sphere64, tmp_path):
        path, _ = sphere64
        rc = cli.main(["--volume", str(path), "--out",
                       str(tmp_path / "out"), "--resize", "70"])
        assert rc == 1
