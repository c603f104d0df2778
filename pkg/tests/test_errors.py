import logging

import pytest

from dasnlab.errors import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, handle_exception
from dasnlab.errors.exceptions import ConfigurationError, DivergenceError, StorageError


@pytest.fixture
def lab_log(caplog):
    logger = logging.getLogger("dasnlab")
    logger.addHandler(caplog.handler)
    caplog.set_level(logging.DEBUG, logger="dasnlab")
    yield caplog
    logger.removeHandler(caplog.handler)


def test_lab_exceptions_log_their_structured_form(lab_log):
    assert handle_exception(DivergenceError(7, "L_sif.sensor")) == EXIT_DIVERGENCE
    details = [r.getMessage() for r in lab_log.records if r.levelno == logging.DEBUG]
    assert details == [
        'error details: {"iteration": 7, "term": "L_sif.sensor", '
        '"error": "DivergenceError", '
        '"message": "Training diverged at iteration 7 in term L_sif.sensor"}'
    ]


def test_exit_codes_follow_the_error_kind(lab_log):
    assert handle_exception(ConfigurationError("bad lr")) == EXIT_CONFIG
    assert handle_exception(StorageError("disk full")) == EXIT_IO
    assert handle_exception(FileNotFoundError("gone")) == EXIT_IO
    assert handle_exception(RuntimeError("boom")) == EXIT_CONFIG
    errors = [r.getMessage() for r in lab_log.records if r.levelno == logging.ERROR]
    assert errors[0] == "ConfigurationError: bad lr"
    assert errors[-1] == "Unexpected error: boom"


def test_to_dict_keeps_payload_fields():
    document = ConfigurationError("bad", payload={"errors": []}).to_dict()
    assert document == {"errors": [], "error": "ConfigurationError", "message": "bad"}
