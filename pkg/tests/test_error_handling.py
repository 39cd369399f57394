"""Tests for the error hierarchy and stage decorator."""

import logging

import pytest

from treegraph.error_handling import (
    DataError,
    PipelineError,
    TreeGraphError,
    create_error_response,
    handle_exceptions,
    setup_logging,
)


class TestHandleExceptions:
    def test_passthrough(self):
        @handle_exceptions("eval")
        def ok(x):
            return x * 2

        assert ok(4) == 8

    def test_known_error_gains_stage(self):
        @handle_exceptions("graph_build")
        def fail():
            raise DataError("bad", error_code="EMPTY_FILE")

        with pytest.raises(DataError) as exc:
            fail()
        assert exc.value.details["stage"] == "graph_build"
        assert exc.value.error_code == "EMPTY_FILE"

    def test_unknown_error_wrapped(self, caplog):
        log = logging.getLogger("treegraph.test")

        @handle_exceptions("nn_train", log)
        def fail():
            raise ZeroDivisionError("division by zero")

        with caplog.at_level("ERROR", logger="treegraph.test"):
            with pytest.raises(PipelineError) as exc:
                fail()
        assert exc.value.error_code == "STAGE_FAILED"
        assert exc.value.details["stage"] == "nn_train"
        assert exc.value.details["function"] == "fail"
        assert isinstance(exc.value.__cause__, ZeroDivisionError)
        assert "nn_train" in caplog.text


class TestCreateErrorResponse:
    def test_without_details(self):
        assert create_error_response("boom") == {"success": False,
                                                 "error": {"message": "boom", "code": "GENERAL_ERROR"}}

    def test_with_details(self):
        response = create_error_response("bad row", "NON_NUMERIC", {"row": 3})
        assert response["error"]["details"] == {"row": 3}
        assert response["error"]["code"] == "NON_NUMERIC"


def test_errors_share_base():
    err = DataError("x")
    assert isinstance(err, TreeGraphError)
    assert err.details == {} and err.error_code is None


def test_setup_logging_file(tmp_path):
    log_file = tmp_path / "run.log"
    logger = setup_logging("warning", str(log_file))
    assert logger.level == logging.WARNING
    assert len(logger.handlers) == 2
    logger.warning("written")
    for handler in logger.handlers:
        handler.flush()
    assert "written" in log_file.read_text(encoding="utf-8")
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
