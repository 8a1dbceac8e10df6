import os

import numpy as np
import pytest

from stc_slr.exceptions import ConfigError
from stc_slr.pose_data import load_dataset, read_manifest
from stc_slr.synth import make_prototypes, render_prototype, synth_generate


class TestSynthGenerate:
    """
    The synthetic generator writes a loadable, seed-reproducible dataset.
    """

    def test_manifest_layout(self, tmp_path):
        path = synth_generate(str(tmp_path), num_classes=3, samples_per_class=8, num_frames=16, seed=0)
        manifest = read_manifest(path)
        assert path == os.path.join(str(tmp_path), "manifest.json")
        assert manifest.num_classes == 3
        assert len(manifest.samples) == 24
        assert sum(e.split == "test" for e in manifest.samples) == 6
        assert {e.signer for e in manifest.samples} == {0, 1, 2, 3}
        assert manifest.samples[0].sample_id == "c000_s000"

    def test_equal_seeds_give_identical_files(self, tmp_path):
        a = synth_generate(str(tmp_path / "a"), num_classes=2, samples_per_class=3, num_frames=10, seed=7)
        b = synth_generate(str(tmp_path / "b"), num_classes=2, samples_per_class=3, num_frames=10, seed=7)
        for entry in read_manifest(a).samples:
            with open(os.path.join(str(tmp_path / "a"), entry.path), "rb") as fa:
                with open(os.path.join(str(tmp_path / "b"), entry.path), "rb") as fb:
                    assert fa.read() == fb.read()

    def test_seeds_differ(self, tmp_path):
        a = load_dataset(synth_generate(str(tmp_path / "a"), 2, 2, 10, seed=0))
        b = load_dataset(synth_generate(str(tmp_path / "b"), 2, 2, 10, seed=1))
        assert not np.array_equal(a[0].frames, b[0].frames)

    def test_noiseless_samples_equal_their_prototype(self, tmp_path):
        dataset = load_dataset(synth_generate(str(tmp_path), 2, 3, 12, seed=4, noiseless=True))
        np.testing.assert_array_equal(dataset[0].frames, dataset[1].frames)
        assert not np.array_equal(dataset[0].frames, dataset[3].frames)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(num_classes=1), dict(num_frames=4), dict(samples_per_class=0), dict(num_signers=0)],
    )
    def test_invalid_arguments(self, tmp_path, kwargs):
        args = dict(num_classes=2, samples_per_class=2, num_frames=10, seed=0)
        args.update(kwargs)
        with pytest.raises(ConfigError):
            synth_generate(str(tmp_path), **args)


class TestPrototypes:
    def test_prototypes_are_distinct(self):
        prototypes = make_prototypes(6, seed=0)
        t = np.linspace(0.0, 1.0, 20)
        rendered = [render_prototype(p, t) for p in prototypes]
        for i in range(len(rendered)):
            for j in range(i + 1, len(rendered)):
                assert np.abs(rendered[i] - rendered[j]).max() > 1.0

    def test_render_shape_and_frame(self):
        frames = render_prototype(make_prototypes(2, seed=0)[1], np.linspace(0.0, 1.0, 9), resolution=(320, 240))
        assert frames.shape == (9, 49, 2)
        assert frames[..., 0].min() > 0 and frames[..., 0].max() < 320
        assert frames[..., 1].min() > 0 and frames[..., 1].max() < 240
