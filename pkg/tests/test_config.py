import pytest

from levyfield import config
from levyfield.errors import ConfigError
from levyfield.measure import JumpMeasure, LevyTriplet

MINIMAL = """
seed = 3
samples = 10

[kernel]
alpha = 1.0
m = 1.0

[noise]
sigma2 = 1.0
"""


def test_reference_config_loads():
    rc = config.load(config.REFERENCE_CONFIG)
    s = rc.study
    assert (s.seed, s.samples) == (0, 200)
    assert s.triplet == LevyTriplet.from_jumps(JumpMeasure.dirac(1.0), sigma2=1.0)
    assert [name for name, _ in rc.sample_noises] == ["gaussian", "poisson", "bigamma"]
    assert rc.mercer_window == (5, 50) and rc.mercer_padding == 1.0
    assert s.kl_padding == 2.0 and s.tau == 0.9


def test_minimal_defaults():
    rc = config.loads(MINIMAL)
    assert rc.study.seed == 3 and rc.study.domain.lower == (0.0,)
    assert rc.sample_noises == (("noise", rc.study.triplet),)


def test_hash_ignores_workers_and_output():
    a = config.loads(MINIMAL)
    b = config.loads('workers = 7\noutput = "elsewhere"\n' + MINIMAL)
    assert a.config_hash == b.config_hash
    c = config.loads(MINIMAL.replace("seed = 3", "seed = 4"))
    assert c.config_hash != a.config_hash
    assert len(a.config_hash) == 64


@pytest.mark.parametrize("text,key", [
    (MINIMAL.replace("alpha = 1.0", "alpha = 0.4"), "kernel"),
    (MINIMAL.replace("m = 1.0", "m = -1.0"), "kernel.m"),
    (MINIMAL + "\n[tails]\nthresholds = [3.0, 2.0]\n", "tails.thresholds"),
    (MINIMAL + "\n[moments]\ntau = 1.5\n", "moments.tau"),
    (MINIMAL + "\n[moments]\nbogus = 1\n", "moments.bogus"),
    (MINIMAL.replace("samples = 10", "samples = 1"), "samples"),
    (MINIMAL.replace("samples = 10", "samples = true"), "samples"),
    (MINIMAL + "\n[noise.jumps]\nkind = \"laplace\"\n", "noise.jumps.kind"),
    (MINIMAL + "\n[transform]\nkind = \"smoothed_step\"\nlow = 2.0\nhigh = 1.0\nwidth = 0.1\n",
     "transform"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config.loads(text)


def test_drift_and_b_exclusive():
    with pytest.raises(ConfigError, match="noise"):
        config.loads(MINIMAL.replace("sigma2 = 1.0", "sigma2 = 1.0\nb = 0.0\ndrift = 0.0"))


def test_beta_below_decay_rate():
    text = MINIMAL + '\n[noise.jumps]\nkind = "gamma"\nintensity = 1.0\ndecay = 2.0\n[moments]\nbeta = 2.5\n'
    with pytest.raises(ConfigError, match="moments.beta"):
        config.loads(text)


def test_toml_syntax_error_has_position():
    with pytest.raises(ConfigError, match="line 3"):
        config.loads("seed = 1\nsamples = 2\n[kernel\n", "bad.toml")


def test_missing_file():
    with pytest.raises(ConfigError, match="nope.toml"):
        config.load("nope.toml")


def test_sample_noise_names_unique():
    text = MINIMAL + '\n[[sample.noise]]\nname = "a"\nsigma2 = 1.0\n[[sample.noise]]\nname = "a"\nsigma2 = 2.0\n'
    with pytest.raises(ConfigError, match="sample.noise"):
        config.loads(text)


def test_two_dimensional():
    text = MINIMAL.replace("alpha = 1.0", "alpha = 1.5") + (
        "\n[domain]\nlower = [0.0, 0.0]\nupper = [1.0, 2.0]\nmesh_cells = [4, 8]\n"
        'dirichlet = ["left"]\n')
    s = config.loads(text).study
    assert s.kernel.d == 2 and s.mesh_cells == (4, 8) and s.dirichlet == ("left",)
