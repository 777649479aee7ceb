import sys


class MidlinesException(Exception):
    def __init__(self, error_message, error_details: sys = sys):
        super().__init__(str(error_message))
        self.error_message = error_message
        _, _, exc_tb = error_details.exc_info()

        if exc_tb is not None:
            while exc_tb.tb_next is not None:
                exc_tb = exc_tb.tb_next
            self.lineno = exc_tb.tb_lineno
            self.file_name = exc_tb.tb_frame.f_code.co_filename
        else:
            # raised directly: report the first frame outside this module
            frame = sys._getframe(1)
            while frame is not None and frame.f_code.co_filename == __file__:
                frame = frame.f_back
            self.lineno = frame.f_lineno if frame is not None else 0
            self.file_name = frame.f_code.co_filename if frame is not None else "<unknown>"

    def __str__(self):
        return "Error occured in python script name [{0}] line number [{1}] error message [{2}]".format(
            self.file_name, self.lineno, str(self.error_message))


class DegenerateBox(MidlinesException):
    """A box or midline pair with zero-length midline or zero area."""


class OutOfBounds(MidlinesException):
    pass


class ShapeMismatch(MidlinesException):
    pass


class NonBinaryGroundTruth(MidlinesException):
    pass


class KinkProximity(MidlinesException):
    """Finite differences would straddle a smooth-L1 kink or the probability clamp."""


class NonConvexInput(MidlinesException):
    pass


class EmptyFile(MidlinesException):
    pass


class AllLinesMalformed(MidlinesException):
    pass


class UnknownClass(MidlinesException):
    def __init__(self, error_message, classes=(), error_details: sys = sys):
        super().__init__(error_message, error_details)
        self.classes = sorted(set(classes))


class ConfigValidationError(MidlinesException):
    pass


class ContainerError(MidlinesException):
    """Unreadable or ill-formed map container / JSON document."""
