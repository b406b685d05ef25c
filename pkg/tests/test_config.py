"""Tests for the YAML study-document parser."""

import pytest

from spdefem import ConfigError, load_config, parse_config

MINIMAL_STRONG = """
study:
  kind: strong
mesh:
  levels_log2: [3, 4, 5]
  reference_log2: 7
noise:
  family: power_decay
  rho: 2.0
"""


class TestDefaults:
    def test_minimal_document_fills_documented_defaults(self):
        cfg = parse_config(MINIMAL_STRONG)
        assert cfg.kind == "strong"
        assert cfg.horizon == 1.0
        assert cfg.samples == 400
        assert cfg.p_order == 2
        assert cfg.seed == 0
        assert cfg.batch_size == 100
        assert cfg.dt_ref == 2.0 ** -8
        assert cfg.length == 1.0
        assert cfg.x0 == "default"
        assert cfg.drift.coeffs == (0.0, 1.0, 0.0, -1.0)  # reaction preset
        assert cfg.covariance.kind == "power_decay"
        assert cfg.covariance.rho == 2.0

    def test_batch_size_defaults_to_min_of_100_and_samples(self):
        cfg = parse_config(MINIMAL_STRONG.replace(
            "kind: strong", "kind: strong\n  samples: 150"))
        assert cfg.batch_size == 100

    def test_log2_and_plain_widths_agree(self):
        plain = MINIMAL_STRONG.replace(
            "levels_log2: [3, 4, 5]", "levels: [0.125, 0.0625, 0.03125]"
        ).replace("reference_log2: 7", "reference: 0.0078125")
        assert parse_config(plain).config_hash \
            == parse_config(MINIMAL_STRONG).config_hash

    def test_load_config_reads_a_file(self, tmp_path):
        path = tmp_path / "study.yaml"
        path.write_text(MINIMAL_STRONG)
        assert load_config(path).config_hash \
            == parse_config(MINIMAL_STRONG).config_hash


class TestStrictness:
    def test_unknown_section_rejected_with_path(self):
        with pytest.raises(ConfigError, match="plotting"):
            parse_config(MINIMAL_STRONG + "\nplotting:\n  style: dots\n")

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match=r"time\.step"):
            parse_config(MINIMAL_STRONG + "\ntime:\n  step: 0.1\n")

    def test_type_errors_carry_the_key_path(self):
        with pytest.raises(ConfigError, match=r"noise\.rho"):
            parse_config(MINIMAL_STRONG.replace("rho: 2.0", "rho: smooth"))
        with pytest.raises(ConfigError, match=r"study\.samples"):
            parse_config(MINIMAL_STRONG.replace(
                "kind: strong", "kind: strong\n  samples: many"))

    def test_booleans_are_not_numbers(self):
        with pytest.raises(ConfigError, match=r"noise\.rho"):
            parse_config(MINIMAL_STRONG.replace("rho: 2.0", "rho: true"))

    def test_malformed_yaml(self):
        with pytest.raises(ConfigError, match="well-formed"):
            parse_config("study: [unclosed")

    def test_non_mapping_root(self):
        with pytest.raises(ConfigError, match="mapping"):
            parse_config("- just\n- a\n- list\n")

    def test_mixing_plain_and_log2_forms(self):
        with pytest.raises(ConfigError, match="not both"):
            parse_config(MINIMAL_STRONG.replace(
                "levels_log2: [3, 4, 5]",
                "levels_log2: [3, 4, 5]\n  levels: [0.125]"))

    def test_missing_required_keys(self):
        with pytest.raises(ConfigError, match=r"study\.kind"):
            parse_config("mesh:\n  levels_log2: [3, 4, 5]\n")
        with pytest.raises(ConfigError, match=r"mesh\.levels"):
            parse_config("study:\n  kind: strong\nnoise:\n  family: white\n")
        with pytest.raises(ConfigError, match=r"noise\.family"):
            parse_config("""
study: {kind: strong}
mesh: {levels_log2: [3, 4, 5], reference_log2: 7}
""")


class TestDriftSection:
    def base(self, drift_block):
        return MINIMAL_STRONG + "\ndrift:\n" + drift_block

    def test_presets(self):
        zero = parse_config(self.base("  preset: zero"))
        assert zero.drift.coeffs == (0.0,)
        linear = parse_config(self.base("  preset: linear\n  rate: -2.5"))
        assert linear.drift.coeffs == (0.0, -2.5)

    def test_explicit_coefficients(self):
        cfg = parse_config(self.base("  coeffs: [0.0, 2.0, 0.0, -0.5]"))
        assert cfg.drift.coeffs == (0.0, 2.0, 0.0, -0.5)

    def test_positive_cubic_rejected_as_one_sided_violation(self):
        with pytest.raises(ConfigError,
                           match="one-sided Lipschitz violated"):
            parse_config(self.base("  coeffs: [0.0, 1.0, 0.0, 1.0]"))

    def test_even_degree_rejected_as_one_sided_violation(self):
        with pytest.raises(ConfigError,
                           match="one-sided Lipschitz violated"):
            parse_config(self.base("  coeffs: [0.0, 1.0, -1.0]"))

    def test_degree_five_rejected(self):
        doc = self.base("  coeffs: [0.0, 1.0, 0.0, 0.0, 0.0, -1.0]")
        with pytest.raises(ConfigError, match="degree must stay below 5"):
            parse_config(doc)
        # the same bound applies when the study is weak
        with pytest.raises(ConfigError, match="degree must stay below 5"):
            parse_config(doc.replace("kind: strong", "kind: weak"))

    def test_rate_requires_linear_preset(self):
        with pytest.raises(ConfigError, match=r"drift\.rate"):
            parse_config(self.base("  preset: zero\n  rate: 1.0"))

    def test_preset_and_coeffs_conflict(self):
        with pytest.raises(ConfigError, match="not both"):
            parse_config(self.base(
                "  preset: zero\n  coeffs: [0.0, 1.0]"))


class TestNoiseSection:
    def test_white(self):
        cfg = parse_config(MINIMAL_STRONG.replace(
            "family: power_decay\n  rho: 2.0",
            "family: white\n  k_trunc: 256"))
        assert cfg.covariance.kind == "white"
        assert cfg.covariance.k_trunc == 256

    def test_custom_requires_weights_and_beta(self):
        doc = MINIMAL_STRONG.replace(
            "family: power_decay\n  rho: 2.0",
            "family: custom\n  weights: [1.0, 0.25, 0.0625]\n  beta: 1.0")
        cfg = parse_config(doc)
        assert cfg.covariance.custom_weights == (1.0, 0.25, 0.0625)
        with pytest.raises(ConfigError, match=r"noise\.beta"):
            parse_config(doc.replace("\n  beta: 1.0", ""))

    def test_rho_only_for_power_decay(self):
        with pytest.raises(ConfigError, match=r"noise\.rho"):
            parse_config(MINIMAL_STRONG.replace(
                "family: power_decay", "family: white"))

    def test_unknown_family(self):
        with pytest.raises(ConfigError, match=r"noise\.family"):
            parse_config(MINIMAL_STRONG.replace(
                "family: power_decay\n  rho: 2.0", "family: pink"))


class TestKindSpecificSections:
    def test_functional_only_for_weak(self):
        doc = MINIMAL_STRONG + "\nfunctional:\n  id: cos_mode_1\n"
        with pytest.raises(ConfigError, match=r"functional\.id"):
            parse_config(doc)
        weak = doc.replace("kind: strong", "kind: weak")
        assert parse_config(weak).functional == "cos_mode_1"

    def test_dt_levels_only_for_splitting(self):
        with pytest.raises(ConfigError, match=r"time\.dt_levels"):
            parse_config(MINIMAL_STRONG
                         + "\ntime:\n  dt_levels_log2: [3, 4, 5]\n")

    def test_policy_only_for_coupled_studies(self):
        doc = """
study: {kind: moments}
mesh: {levels_log2: [3, 4, 5]}
noise: {family: power_decay, rho: 2.0}
time: {policy: h2beta}
"""
        with pytest.raises(ConfigError, match=r"time\.policy"):
            parse_config(doc)

    def test_splitting_document(self):
        cfg = parse_config("""
study:
  kind: splitting_dt
  samples: 100
mesh:
  levels_log2: [5]
noise:
  family: power_decay
  rho: 2.0
  k_trunc: 64
time:
  dt_levels_log2: [3, 4, 5]
  dt_ref_log2: 8
""")
        assert cfg.kind == "splitting_dt"
        assert cfg.dt_levels == (0.125, 0.0625, 0.03125)
        assert cfg.dt_ref == 2.0 ** -8

    def test_operators_pairs(self):
        cfg = parse_config("""
study: {kind: operators}
mesh: {levels_log2: [3, 4, 5]}
operators:
  pairs: [[0, 2, l2], [0.5, 1.5, semigroup]]
""")
        assert cfg.operator_pairs == ((0.0, 2.0, "l2"),
                                      (0.5, 1.5, "semigroup"))

    def test_operators_pairs_validated(self):
        with pytest.raises(ConfigError, match=r"operators\.pairs\[0\]"):
            parse_config("""
study: {kind: operators}
mesh: {levels_log2: [3, 4, 5]}
operators:
  pairs: [[0, 2, fourier]]
""")

    def test_operators_section_only_for_operator_studies(self):
        with pytest.raises(ConfigError, match=r"operators\.pairs"):
            parse_config(MINIMAL_STRONG
                         + "\noperators:\n  pairs: [[0, 2, l2]]\n")


class TestDownstreamValidation:
    def test_study_level_errors_surface(self):
        # fine reference too close to the tested levels: caught by the
        # study validation, re-raised with document context
        with pytest.raises(ConfigError, match="reference width"):
            parse_config(MINIMAL_STRONG.replace("reference_log2: 7",
                                                "reference_log2: 6"))

    def test_initial_profile_choices(self):
        cfg = parse_config(MINIMAL_STRONG + "\ninitial:\n  profile: mode1\n")
        assert cfg.x0 == "mode1"
        with pytest.raises(ConfigError, match="x0"):
            parse_config(MINIMAL_STRONG + "\ninitial:\n  profile: bump\n")
