import logging

from deepshells.preprocess import prepare_shape
from deepshells.profiling import stopwatch, timed
from deepshells.shot import ShotConfig


def test_timed_logs_each_call(caplog):
    caplog.set_level(logging.INFO, logger="deepshells.profiling")

    @timed("{name} of {args[0]} with scale={kwargs[scale]} took {seconds:.0f}s")
    def scaled(x, scale=1):
        return x * scale

    assert scaled(3, scale=2) == 6
    assert scaled.__name__ == "scaled"
    assert "scaled of 3 with scale=2 took 0s" in caplog.messages


def test_timed_respects_the_level(caplog):
    caplog.set_level(logging.INFO, logger="deepshells.profiling")

    @timed("quiet", level=logging.DEBUG)
    def quiet():
        return None

    quiet()
    assert "quiet" not in caplog.messages


def test_preprocessing_stages_are_timed(tiny_blob, caplog):
    caplog.set_level(logging.INFO, logger="deepshells.profiling")
    prepare_shape(tiny_blob, n_eigs=10, shot=ShotConfig(radius_fraction=0.2))
    messages = " ".join(caplog.messages)
    assert "eigenpairs of <TriMesh n=42" in messages
    assert "SHOT descriptors of <TriMesh n=42" in messages


def test_stopwatch_logs_its_label(caplog):
    caplog.set_level(logging.INFO, logger="deepshells.profiling")
    with stopwatch("counting"):
        sum(range(10))
    assert caplog.messages[-1].startswith("counting took ")
