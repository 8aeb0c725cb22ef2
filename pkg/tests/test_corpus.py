"""Synthetic corpus: determinism, band separation, prompts, manifest I/O."""

import numpy as np
import pytest

from emotts.corpus import (
    Dataset,
    FactorSpec,
    generate_corpus,
    load_manifest,
    make_prompt_assets,
    render_utterance,
    replace_factors_emotion,
    sample_factors,
)
from emotts.data_model import validate_record
from emotts.errors import ContractViolation, ManifestError

SPEC = FactorSpec(
    n_speakers=2,
    n_emotions=2,
    phoneme_vocab=6,
    utterances_per_speaker=10,
    n_mels=24,
    low_band=8,
    seed=11,
)


def draw(seed, **overrides):
    rng = np.random.default_rng(seed)
    return sample_factors(SPEC, rng, **overrides)


class TestSampleFactors:
    def test_intensity_in_unit_interval(self):
        for seed in range(50):
            f = draw(seed)
            assert 0.0 < f.intensity <= 1.0

    def test_single_phoneme_vocab(self):
        spec = FactorSpec(
            n_speakers=1, n_emotions=2, phoneme_vocab=1,
            utterances_per_speaker=1, n_mels=24, low_band=8, seed=0,
        )
        rng = np.random.default_rng(3)
        f = sample_factors(spec, rng)
        assert set(f.phonemes.ids) == {0}

    def test_contour_matches_total_frames(self):
        for seed in range(20):
            f = draw(seed)
            assert len(f.contour) == f.durations.total_frames

    def test_durations_bounded(self):
        for seed in range(50):
            f = draw(seed)
            assert all(1 <= d <= 8 for d in f.durations.frames)

    def test_emotion_families_share_mean_slope_sign(self):
        # Slope estimated by least squares per draw; sign must be family-wide.
        for emotion in (0, 1):
            slopes = []
            for seed in range(100):
                f = draw(seed, emotion_id=emotion)
                t = np.arange(len(f.contour))
                slope = np.polyfit(t / max(1, len(t) - 1), f.contour, 1)[0]
                slopes.append(slope)
            mean_slope = np.mean(slopes)
            assert (mean_slope > 0) == (emotion == 0)


class TestRenderUtterance:
    def test_deterministic(self):
        f = draw(5)
        a = render_utterance(f, SPEC)
        b = render_utterance(f, SPEC)
        assert a.values.tobytes() == b.values.tobytes()

    def test_speaker_change_touches_upper_band_only(self):
        # Band-wise oracle: swap speaker, compare per-band max abs diffs.
        for seed in range(10):
            f = draw(seed, speaker_id=0)
            g = draw(seed, speaker_id=1)
            a = render_utterance(f, SPEC).values
            b = render_utterance(g, SPEC).values
            low_diff = np.abs(a[: SPEC.low_band] - b[: SPEC.low_band]).max()
            up_diff = np.abs(a[SPEC.low_band :] - b[SPEC.low_band :]).max()
            noise_bound = 0.02 * max(np.abs(a).max(), np.abs(b).max())
            assert low_diff <= noise_bound
            assert up_diff > noise_bound

    def test_contour_change_touches_low_band_only(self):
        for seed in range(10):
            f = draw(seed, emotion_id=0)
            rng = np.random.default_rng(seed + 1000)
            g = replace_factors_emotion(f, SPEC, 1, rng)
            a = render_utterance(f, SPEC).values
            b = render_utterance(g, SPEC).values
            low_diff = np.abs(a[: SPEC.low_band] - b[: SPEC.low_band]).max()
            up_diff = np.abs(a[SPEC.low_band :] - b[SPEC.low_band :]).max()
            noise_bound = 0.02 * max(np.abs(a).max(), np.abs(b).max())
            assert up_diff <= noise_bound
            assert low_diff > noise_bound

    def test_band_separation_energy_ratio_over_pairs(self):
        # Prosody-only changes move low-band energy >10x more than upper, and
        # content/timbre-only changes do the reverse, over 50 seeded pairs.
        prosody_ratios, content_ratios = [], []
        for seed in range(50):
            base = draw(seed, speaker_id=0, emotion_id=0)
            a = render_utterance(base, SPEC).values

            swapped = replace_factors_emotion(
                base, SPEC, 1, np.random.default_rng(seed + 2000)
            )
            b = render_utterance(swapped, SPEC).values
            low = np.sqrt(np.mean((a[: SPEC.low_band] - b[: SPEC.low_band]) ** 2))
            up = np.sqrt(np.mean((a[SPEC.low_band :] - b[SPEC.low_band :]) ** 2))
            prosody_ratios.append(low / max(up, 1e-12))

            other = draw(seed, speaker_id=1, emotion_id=0)
            c = render_utterance(other, SPEC).values
            # Same durations are required for a frame-aligned comparison.
            if c.shape == a.shape:
                low = np.sqrt(np.mean((a[: SPEC.low_band] - c[: SPEC.low_band]) ** 2))
                up = np.sqrt(np.mean((a[SPEC.low_band :] - c[SPEC.low_band :]) ** 2))
                content_ratios.append(up / max(low, 1e-12))
        assert np.median(prosody_ratios) > 10
        assert all(r > 10 for r in prosody_ratios)
        assert len(content_ratios) > 10
        assert all(r > 10 for r in content_ratios)

    def test_contour_length_enforced_at_construction(self):
        f = draw(1)
        with pytest.raises(ContractViolation):
            type(f)(
                speaker_id=f.speaker_id,
                emotion_id=f.emotion_id,
                intensity=f.intensity,
                phonemes=f.phonemes,
                durations=f.durations,
                contour=f.contour[:-1],
            )


class TestPromptAssets:
    def test_deterministic(self):
        t1, i1 = make_prompt_assets(0, 1.0, SPEC)
        t2, i2 = make_prompt_assets(0, 1.0, SPEC)
        assert t1 == t2
        assert np.array_equal(i1, i2)

    def test_distinct_glyphs_per_emotion(self):
        _, a = make_prompt_assets(0, 0.8, SPEC)
        _, b = make_prompt_assets(1, 0.8, SPEC)
        assert not np.array_equal(a, b)

    def test_intensity_scales_brightness_same_shape(self):
        _, lo = make_prompt_assets(0, 0.3, SPEC)
        _, hi = make_prompt_assets(0, 1.0, SPEC)
        assert np.array_equal(lo > 10, hi > 10)  # same glyph mask
        assert hi.mean() > lo.mean()

    def test_text_mentions_emotion_word(self):
        text, _ = make_prompt_assets(1, 0.9, SPEC)
        assert "happy" in text


class TestGenerateCorpus:
    def test_manifest_line_count(self, tmp_path):
        manifest = generate_corpus(SPEC, tmp_path)
        assert len(load_manifest(manifest)) == 20

    def test_regeneration_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        ma = generate_corpus(SPEC, a_dir)
        mb = generate_corpus(SPEC, b_dir)
        assert ma.read_bytes() == mb.read_bytes()
        for rel in sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file()):
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes(), rel

    def test_all_records_validate(self, tmp_path):
        manifest = generate_corpus(SPEC, tmp_path)
        for record in load_manifest(manifest):
            report = validate_record(record, tmp_path)
            assert report.ok, report.issues


class TestLoadManifest:
    def test_count_matches_spec(self, tmp_path):
        manifest = generate_corpus(SPEC, tmp_path)
        ds = load_manifest(manifest)
        assert len(ds.records()) == SPEC.n_speakers * SPEC.utterances_per_speaker

    def test_corrupted_line_names_line_number(self, tmp_path):
        manifest = generate_corpus(SPEC, tmp_path)
        lines = manifest.read_text().splitlines()
        lines[4] = "{not json"
        manifest.write_text("".join(ln + "\n" for ln in lines))
        with pytest.raises(ManifestError) as exc:
            load_manifest(manifest).records()
        assert exc.value.line_number == 5

    def test_empty_manifest_is_empty_dataset(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("")
        ds = Dataset(path)
        assert len(ds) == 0 and ds.records() == []

    def test_order_stable(self, tmp_path):
        manifest = generate_corpus(SPEC, tmp_path)
        first = [r.utt_id for r in load_manifest(manifest)]
        second = [r.utt_id for r in load_manifest(manifest)]
        assert first == second
