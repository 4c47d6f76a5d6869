from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from cdr_agent.errors import EmbeddingError
from cdr_agent.providers import MockEmbeddingProvider
from cdr_agent.selection import (
    SelectionConfig,
    cosine_similarity,
    embed,
    fit_gaussian,
    qq_points,
    select_cdrs,
    truncate_note,
)


class TestEmbed:
    def test_mock_is_deterministic(self):
        provider = MockEmbeddingProvider()
        first = embed("a", provider)
        second = embed("a", provider)
        assert np.array_equal(first, second)

    def test_mock_is_unit_norm(self):
        provider = MockEmbeddingProvider()
        for text in ("a", "neck pain after a fall", "GCS 14 with vomiting"):
            assert math.isclose(float(np.linalg.norm(embed(text, provider))), 1.0, rel_tol=1e-12)

    def test_empty_text_rejected(self):
        with pytest.raises(EmbeddingError):
            embed("   ", MockEmbeddingProvider())

    def test_lexical_overlap_orders_similarity(self):
        provider = MockEmbeddingProvider()
        note = embed("midline cervical tenderness after fall", provider)
        close = embed("cervical tenderness at the midline", provider)
        far = embed("routine diabetes medication refill visit", provider)
        assert cosine_similarity(note, close) > cosine_similarity(note, far)


class TestCosineSimilarity:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = rng.normal(size=17)
            assert abs(cosine_similarity(v, v) - 1.0) < 1e-12

    def test_orthogonal_is_zero(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_computed_value(self):
        # Independent oracle: cos = 32 / sqrt(14 * 77) = sqrt(512/539).
        expected = math.sqrt(512 / 539)
        got = cosine_similarity(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert abs(got - expected) < 1e-12
        assert f"{got:.9f}" == "0.974631846"

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_zero_vector(self):
        with pytest.raises(ValueError, match="zero vector"):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_scale_invariance_and_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=9), rng.normal(size=9)
        assert abs(cosine_similarity(a, b) - cosine_similarity(b, a)) < 1e-15
        assert abs(cosine_similarity(3.7 * a, b) - cosine_similarity(a, b)) < 1e-12


class TestTruncateNote:
    def test_retention_one_returns_input_unchanged(self):
        note = "word " * 10 + "\n  trailing   spaces preserved"
        rng = np.random.default_rng(0)
        assert truncate_note(note, 1.0, rng) == note

    def test_half_retention_is_contiguous_span(self):
        tokens = [f"t{i}" for i in range(10)]
        note = " ".join(tokens)
        rng = np.random.default_rng(3)
        for _ in range(20):
            out = truncate_note(note, 0.5, rng).split()
            assert len(out) == 5
            start = tokens.index(out[0])
            assert out == tokens[start : start + 5]

    def test_seed_determinism(self):
        note = " ".join(f"tok{i}" for i in range(50))
        a = truncate_note(note, 0.3, np.random.default_rng(42))
        b = truncate_note(note, 0.3, np.random.default_rng(42))
        assert a == b

    def test_span_length_is_ceiling(self):
        note = " ".join(f"t{i}" for i in range(7))
        out = truncate_note(note, 0.5, np.random.default_rng(0))
        assert len(out.split()) == math.ceil(0.5 * 7)

    def test_empty_note_rejected(self):
        with pytest.raises(ValueError):
            truncate_note("  ", 0.5, np.random.default_rng(0))


class TestFitGaussian:
    def test_degenerate_variance_hits_floor(self):
        mu, sigma = fit_gaussian([0.5, 0.5, 0.5], sigma_floor=1e-9)
        assert mu == 0.5
        assert sigma == 1e-9

    def test_two_points_closed_form(self):
        # Sample std of [0, 1] with ddof=1 is sqrt(1/2).
        mu, sigma = fit_gaussian([0.0, 1.0])
        assert abs(mu - 0.5) < 1e-15
        assert abs(sigma - 0.7071067811865476) < 1e-12

    def test_four_points_closed_form(self):
        # Var = ((.3)^2 + (.1)^2 + (.1)^2 + (.3)^2) / 3 = 1/15.
        mu, sigma = fit_gaussian([0.2, 0.4, 0.6, 0.8])
        assert abs(mu - 0.5) < 1e-15
        assert abs(sigma - 0.2581988897471611) < 1e-12

    def test_too_few_scores(self):
        with pytest.raises(ValueError):
            fit_gaussian([0.5])


class _PlantedProvider:
    """Scores one target text high against the note, everything else low.

    Returns fixed orthogonal-ish vectors so cosine values are controlled.
    """

    provider_id = "planted"

    def __init__(self, target_text: str, registry_texts: list[str]):
        self.target_text = target_text
        self.registry_texts = registry_texts

    def embed_many(self, texts):
        out = []
        for text in texts:
            vec = np.zeros(64)
            if text == self.target_text:
                vec[0] = 1.0
            elif text in self.registry_texts:
                # Small deterministic per-text noise in a shared direction.
                idx = self.registry_texts.index(text)
                vec[1] = 1.0
                vec[2 + idx] = 0.15
            else:  # the note and its truncations
                vec[0] = 0.9
                vec[1] = 0.1
            out.append(vec / np.linalg.norm(vec))
        return out


class TestSelectCdrs:
    def test_planted_outlier_is_selected(self, monkeypatch):
        from cdr_agent import registry as registry_mod

        raws = []
        for i in range(20):
            raws.append(
                {
                    "id": f"rule_{i:02d}",
                    "name": f"Rule {i}",
                    "description": f"Description number {i}.",
                    "variables": [
                        {"name": "flag", "vtype": "boolean", "definition": "f", "negative_default": False}
                    ],
                    "rule": {"if": {"var": "flag", "op": "eq", "value": True}, "then": "go", "else": "stop"},
                    "outcomes": ["go", "stop"],
                }
            )
        defs = tuple(registry_mod.parse_definition(r) for r in raws)
        registry = registry_mod.Registry(definitions=defs, source_digest="x")
        texts = [registry_mod.selection_text(d) for d in defs]
        provider = _PlantedProvider(target_text=texts[7], registry_texts=texts)
        profile = select_cdrs("a note about rule seven", registry, SelectionConfig(), provider)
        assert profile.selected == ("rule_07",)

    def test_all_equal_scores_select_nothing(self, bundled_registry):
        class ConstantProvider:
            provider_id = "const"

            def embed_many(self, texts):
                return [np.array([1.0, 0.0]) for _ in texts]

        profile = select_cdrs("any note", bundled_registry, SelectionConfig(), ConstantProvider())
        assert profile.selected == ()
        assert profile.sigma_hat == SelectionConfig().sigma_floor

    def test_single_truncation_statistic_is_full_note_score(self, bundled_registry):
        provider = MockEmbeddingProvider()
        note = "There is midline spinal tenderness over the cervical spine after a fall."
        config = SelectionConfig(num_truncations=1, retention_ratio=1.0)
        profile = select_cdrs(note, bundled_registry, config, provider)
        from cdr_agent.registry import selection_text

        for d in bundled_registry:
            expected = cosine_similarity(embed(note, provider), embed(selection_text(d), provider))
            sim = profile.per_cdr[d.id]
            assert sim.scores == (expected,)
            assert sim.statistic == expected

    def test_retention_one_independent_of_truncations_and_seed(self, bundled_registry):
        provider = MockEmbeddingProvider()
        note = "Infant fell from a couch; parietal scalp hematoma noted; acting normally."
        profiles = [
            select_cdrs(
                note,
                bundled_registry,
                SelectionConfig(num_truncations=n, retention_ratio=1.0, rng_seed=seed),
                provider,
            )
            for n, seed in ((1, 0), (7, 0), (10, 123), (3, 999))
        ]
        baseline = profiles[0]
        for profile in profiles[1:]:
            assert profile.selected == baseline.selected
            for cdr_id, sim in profile.per_cdr.items():
                assert sim.statistic == baseline.per_cdr[cdr_id].statistic

    def test_selection_invariant_under_positive_rescaling(self, bundled_registry):
        class Scaled:
            provider_id = "scaled-mock"

            def __init__(self, factor):
                self.inner = MockEmbeddingProvider()
                self.factor = factor

            def embed_many(self, texts):
                return [self.factor * v for v in self.inner.embed_many(texts)]

        note = "The child complains of abdominal pain with a seat belt sign after a crash."
        config = SelectionConfig(rng_seed=5)
        plain = select_cdrs(note, bundled_registry, config, Scaled(1.0))
        scaled = select_cdrs(note, bundled_registry, config, Scaled(37.5))
        assert plain.selected == scaled.selected

    def test_empty_inputs_rejected(self, bundled_registry):
        with pytest.raises(ValueError):
            select_cdrs("  ", bundled_registry, SelectionConfig(), MockEmbeddingProvider())

    def test_selected_ordering_descending_statistic(self, registry15):
        provider = MockEmbeddingProvider()
        note = (
            "An infant presenting after head trauma. A palpable skull fracture is appreciated "
            "on examination of the head. There is altered mental status with somnolence."
        )
        profile = select_cdrs(note, registry15, SelectionConfig(), provider)
        statistics = [profile.per_cdr[c].statistic for c in profile.selected]
        assert statistics == sorted(statistics, reverse=True)

    def test_scores_within_bounds_and_statistic_is_mean(self, registry15):
        provider = MockEmbeddingProvider()
        note = " ".join(f"word{i} filler clinical text" for i in range(30))
        profile = select_cdrs(note, registry15, SelectionConfig(rng_seed=2), provider)
        for sim in profile.per_cdr.values():
            assert all(-1.0 <= s <= 1.0 for s in sim.scores)
            assert abs(sim.statistic - float(np.mean(sim.scores))) < 1e-12
            assert len(sim.scores) == SelectionConfig().num_truncations


class TestSelectionConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": 0.0},
            {"alpha": 1.0},
            {"num_truncations": 0},
            {"retention_ratio": 0.0},
            {"retention_ratio": 1.2},
            {"sigma_floor": 0.0},
        ],
    )
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SelectionConfig(**kwargs)


class TestQqPoints:
    def test_fixed_point_on_identity_line(self):
        # Scores that are exactly the fitted Gaussian's quantiles at the
        # plotting positions standardize back onto y = x.
        n = 25
        theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
        points = qq_points(theoretical.tolist(), mu_hat=0.0, sigma_hat=1.0)
        for theo, sample in points:
            assert abs(theo - sample) < 1e-9

    def test_three_scores_theoretical_quantiles(self):
        points = qq_points([0.0, 0.5, 1.0])
        theoreticals = [p[0] for p in points]
        expected = [stats.norm.ppf(1 / 6), stats.norm.ppf(1 / 2), stats.norm.ppf(5 / 6)]
        assert np.allclose(theoreticals, expected, atol=1e-12)
        assert abs(theoreticals[0] + 0.9674215661017014) < 1e-9
        assert theoreticals[1] == 0.0

    def test_too_few_scores(self):
        with pytest.raises(ValueError):
            qq_points([0.0, 1.0])

    def test_standardization_uses_fitted_parameters(self):
        scores = [0.2, 0.4, 0.6, 0.8]
        mu, sigma = fit_gaussian(scores)
        points = qq_points(scores)
        samples = [p[1] for p in points]
        expected = sorted((s - mu) / sigma for s in scores)
        assert np.allclose(samples, expected, atol=1e-12)


class TestCalibration:
    """Monte-Carlo behavior of the anomaly test on synthetic score profiles."""

    def test_false_selection_rate_near_alpha(self):
        rng = np.random.default_rng(2024)
        alpha = 0.05
        threshold = stats.norm.isf(alpha)
        trials, n = 300, 200
        rates = []
        for _ in range(trials):
            scores = rng.normal(size=n)
            mu, sigma = fit_gaussian(scores)
            z = (scores - mu) / sigma
            rates.append(float(np.mean(z > threshold)))
        assert 0.5 * alpha <= float(np.mean(rates)) <= 1.5 * alpha

    def test_planted_outliers_recalled(self):
        rng = np.random.default_rng(7)
        threshold = stats.norm.isf(0.05)
        hits = total = 0
        for _ in range(300):
            scores = np.concatenate([rng.normal(size=197), np.full(3, 6.0)])
            mu, sigma = fit_gaussian(scores)
            z = (scores[-3:] - mu) / sigma
            hits += int(np.sum(z > threshold))
            total += 3
        assert hits / total >= 0.99
