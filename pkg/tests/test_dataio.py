import numpy as np
import pytest

from sasvfuse import (ConfigError, DataError, DegenerateInputError,
                      EmbeddingStore, SynthSpec, Trial, assemble_features,
                      cosine_score, eval_report, generate_synthetic,
                      parse_enrollment_map, parse_protocol, read_embeddings,
                      write_embeddings, write_enrollment_map, write_protocol)
from sasvfuse.fusion import asv_mean_score, cm_axis_score, fit_cm_axis


class TestProtocol:
    def test_parse_line(self, tmp_path):
        p = tmp_path / "p.trl"
        p.write_text("spk01 utt_0042 target\n")
        trials = parse_protocol(p)
        assert trials == [Trial("spk01", "utt_0042", "target")]

    def test_unknown_label(self, tmp_path):
        p = tmp_path / "p.trl"
        p.write_text("spk01 utt_0042 bonafide\n")
        with pytest.raises(DataError, match="line 1"):
            parse_protocol(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "p.trl"
        p.write_text("")
        assert parse_protocol(p) == []

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "p.trl"
        p.write_text("# header\n\nspk01 u1 spoof\n   \n# tail\n")
        assert parse_protocol(p) == [Trial("spk01", "u1", "spoof")]

    def test_wrong_field_count_names_line(self, tmp_path):
        p = tmp_path / "p.trl"
        p.write_text("spk01 u1 target\nspk02 u2\n")
        with pytest.raises(DataError, match="line 2"):
            parse_protocol(p)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        trials = [Trial(f"spk{rng.integers(9)}", f"u{i}",
                        ("target", "nontarget", "spoof")[int(rng.integers(3))])
                  for i in range(57)]
        p = tmp_path / "p.trl"
        write_protocol(trials, p)
        assert parse_protocol(p) == trials


class TestEnrollmentMap:
    def test_round_trip(self, tmp_path):
        mapping = {"spk0": ["u1", "u2"], "spk1": ["u3"]}
        p = tmp_path / "e.map"
        write_enrollment_map(mapping, p)
        assert parse_enrollment_map(p) == mapping

    def test_bad_line(self, tmp_path):
        p = tmp_path / "e.map"
        p.write_text("spk0 u1 extra\n")
        with pytest.raises(DataError, match="line 1"):
            parse_enrollment_map(p)


class TestEmbeddingFiles:
    def make_store(self):
        store = EmbeddingStore("m0", 4)
        rng = np.random.default_rng(1)
        for i in range(3):
            vec = rng.normal(size=4).astype(np.float32).astype(np.float64)
            store.add(f"utt{i}", vec)
        return store

    def test_round_trip_bit_exact(self, tmp_path):
        store = self.make_store()
        p = tmp_path / "m0.emb"
        write_embeddings(store, p)
        back = read_embeddings(p, model_id="m0")
        assert back.dim == store.dim
        assert list(back.entries) == list(store.entries)
        for utt, vec in store.entries.items():
            np.testing.assert_array_equal(back.entries[utt], vec)

    def test_write_read_write_identical_bytes(self, tmp_path):
        store = self.make_store()
        p1, p2 = tmp_path / "a.emb", tmp_path / "b.emb"
        write_embeddings(store, p1)
        write_embeddings(read_embeddings(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        store = self.make_store()
        p = tmp_path / "m0.emb"
        write_embeddings(store, p)
        blob = bytearray(p.read_bytes())
        blob[0] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="magic"):
            read_embeddings(p)

    def test_truncated_record(self, tmp_path):
        store = self.make_store()
        p = tmp_path / "m0.emb"
        write_embeddings(store, p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-3])  # chop part of the final vector
        with pytest.raises(DataError, match="truncated"):
            read_embeddings(p)

    def test_trailing_bytes(self, tmp_path):
        store = self.make_store()
        p = tmp_path / "m0.emb"
        write_embeddings(store, p)
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(DataError, match="trailing"):
            read_embeddings(p)

    def test_store_rejects_wrong_dim(self):
        store = EmbeddingStore("m0", 8)
        with pytest.raises(DataError, match="shape"):
            store.add("u0", np.zeros(7))

    def test_store_rejects_duplicate_id(self):
        store = EmbeddingStore("m0", 2)
        store.add("u0", np.zeros(2))
        with pytest.raises(DataError, match="duplicate"):
            store.add("u0", np.ones(2))


class TestCosine:
    def test_identical(self):
        assert cosine_score([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert cosine_score([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_exact_rational(self):
        # dot = 24, norms 5 and 5, so exactly 24/25
        assert cosine_score([3.0, 4.0], [4.0, 3.0]) == pytest.approx(24 / 25, abs=1e-15)

    def test_zero_norm(self):
        with pytest.raises(DegenerateInputError):
            cosine_score([0.0, 0.0], [1.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            cosine_score([1.0], [1.0, 0.0])

    def test_symmetric_and_scale_invariant(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.normal(size=5)
            b = rng.normal(size=5)
            lam, mu = rng.uniform(0.1, 10.0, size=2)
            s = cosine_score(a, b)
            assert abs(s - cosine_score(b, a)) < 1e-12
            assert abs(s - cosine_score(lam * a, mu * b)) < 1e-12
            assert -1.0 <= s <= 1.0


class TestAssembleFeatures:
    def build(self, enroll_utts):
        asv = EmbeddingStore("asv0", 2)
        cm = EmbeddingStore("cm0", 3)
        asv.add("e0", np.array([1.0, 0.0]))
        asv.add("e1", np.array([0.0, 1.0]))
        asv.add("t0", np.array([1.0, 1.0]))
        cm.add("e0", np.zeros(3))
        cm.add("e1", np.zeros(3))
        cm.add("t0", np.array([1.0, 2.0, 3.0]))
        trials = [Trial("spkA", "t0", "target")]
        return trials, [asv], [cm], {"spkA": enroll_utts}

    def test_single_enrollment_is_identity(self):
        trials, asv, cm, emap = self.build(["e0"])
        feats = assemble_features(trials, asv, cm, emap)
        expected = cosine_score([1.0, 0.0], [1.0, 1.0])
        assert feats[0].asv_scores[0] == pytest.approx(expected, abs=1e-15)

    def test_two_enrollments_mean(self):
        trials, asv, cm, emap = self.build(["e0", "e1"])
        feats = assemble_features(trials, asv, cm, emap)
        # mean of [1,0] and [0,1] is [0.5,0.5], parallel to the test vector
        assert feats[0].asv_scores[0] == pytest.approx(1.0, abs=1e-12)

    def test_cm_side_uses_test_utterance(self):
        trials, asv, cm, emap = self.build(["e0"])
        feats = assemble_features(trials, asv, cm, emap)
        np.testing.assert_array_equal(feats[0].cm_embeddings[0], [1.0, 2.0, 3.0])

    def test_shapes_for_three_by_three(self, synth_default):
        _, features = synth_default
        feat = features["train"][0]
        assert feat.asv_scores.shape == (3,)
        assert len(feat.cm_embeddings) == 3

    def test_order_and_count_preserved(self, synth_default):
        data, features = synth_default
        for split in ("train", "dev", "eval"):
            trials = data.trials[split]
            feats = features[split]
            assert len(feats) == len(trials)
            assert [f.label for f in feats] == [t.label for t in trials]

    def test_missing_utterance_names_id_and_store(self):
        trials, asv, cm, emap = self.build(["e0"])
        trials.append(Trial("spkA", "missing", "target"))
        with pytest.raises(DataError, match="missing.*asv0"):
            assemble_features(trials, asv, cm, emap)

    def test_missing_identity_named(self):
        trials, asv, cm, emap = self.build(["e0"])
        trials[0] = Trial("spkB", "t0", "target")
        with pytest.raises(DataError, match="spkB"):
            assemble_features(trials, asv, cm, emap)


class TestSynth:
    def test_same_seed_bit_identical(self):
        spec = SynthSpec(n_speakers=4, utts_per_speaker=12, seed=9)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert a.trials == b.trials
        assert a.enrollment_map == b.enrollment_map
        for sa, sb in zip(a.asv_stores + a.cm_stores, b.asv_stores + b.cm_stores):
            assert list(sa.entries) == list(sb.entries)
            for utt in sa.entries:
                np.testing.assert_array_equal(sa.entries[utt], sb.entries[utt])

    def test_different_seed_differs(self):
        a = generate_synthetic(SynthSpec(n_speakers=4, utts_per_speaker=12, seed=1))
        b = generate_synthetic(SynthSpec(n_speakers=4, utts_per_speaker=12, seed=2))
        utt = next(iter(a.asv_stores[0].entries))
        assert not np.array_equal(a.asv_stores[0].entries[utt],
                                  b.asv_stores[0].entries[utt])

    def test_balanced_splits(self, synth_default):
        data, _ = synth_default
        for split, trials in data.trials.items():
            counts = {lab: sum(1 for t in trials if t.label == lab)
                      for lab in ("target", "nontarget", "spoof")}
            assert len(set(counts.values())) == 1, (split, counts)

    def test_nontarget_trials_borrow_other_speakers(self, synth_default):
        data, _ = synth_default
        for trials in data.trials.values():
            for t in trials:
                if t.label == "nontarget":
                    assert not t.test_utt.startswith(t.enroll_id)
                if t.label == "target":
                    assert t.test_utt.startswith(t.enroll_id)

    def test_zero_speaker_separation_gives_chance_sv(self):
        # statistical assertion, so use the full default-size dataset
        spec = SynthSpec(speaker_separation=0.0, seed=3)
        data = generate_synthetic(spec)
        feats = []
        for split in ("train", "dev", "eval"):
            feats += assemble_features(data.trials[split], data.asv_stores,
                                       data.cm_stores, data.enrollment_map)
        rep = eval_report([asv_mean_score(f) for f in feats], [f.label for f in feats])
        assert abs(rep.sv_eer - 0.5) < 0.05

    def test_mimicking_spoofs_fool_asv_but_not_cm(self):
        spec = SynthSpec(n_speakers=10, utts_per_speaker=24, seed=4,
                         spoof_mimics_target=True)
        data = generate_synthetic(spec)
        train = assemble_features(data.trials["train"], data.asv_stores,
                                  data.cm_stores, data.enrollment_map)
        ev = assemble_features(data.trials["eval"], data.asv_stores,
                               data.cm_stores, data.enrollment_map)
        labels = [f.label for f in ev]
        asv_rep = eval_report([asv_mean_score(f) for f in ev], labels)
        assert asv_rep.spf_eer >= 0.40
        axes = fit_cm_axis(train)
        cm_rep = eval_report([cm_axis_score(f, axes) for f in ev], labels)
        assert cm_rep.spf_eer <= 0.02

    def test_non_mimicking_spoofs_rejected_by_asv(self):
        spec = SynthSpec(n_speakers=10, utts_per_speaker=24, seed=4,
                         spoof_mimics_target=False)
        data = generate_synthetic(spec)
        ev = assemble_features(data.trials["eval"], data.asv_stores,
                               data.cm_stores, data.enrollment_map)
        rep = eval_report([asv_mean_score(f) for f in ev], [f.label for f in ev])
        assert rep.spf_eer <= 0.10

    def test_bad_specs_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SynthSpec(n_speakers=0))
        with pytest.raises(ConfigError):
            generate_synthetic(SynthSpec(n_speakers=1))
        with pytest.raises(ConfigError):
            generate_synthetic(SynthSpec(utts_per_speaker=5))
        with pytest.raises(ConfigError):
            generate_synthetic(SynthSpec(speaker_separation=-1.0))
        with pytest.raises(ConfigError):
            generate_synthetic(SynthSpec(asv_dims=()))
