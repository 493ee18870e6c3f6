class CrowdSimError(Exception):
    """
    pycrowdsimpy が送出する例外の基底クラス
    """


class CrowdSimValueError(CrowdSimError, ValueError):
    pass


class InvalidGeoPoint(CrowdSimValueError):
    pass


class InvalidTaxonomy(CrowdSimValueError):
    pass


class EmptyWorld(CrowdSimValueError):
    pass


class ClockRegression(CrowdSimValueError):
    pass


class OutOfOrder(CrowdSimValueError):
    pass


class NoWorkers(CrowdSimValueError):
    pass


class NotEmergency(CrowdSimValueError):
    pass


class NoEvents(CrowdSimValueError):
    pass


class NonPositiveTime(CrowdSimValueError):
    pass


class NoAnswers(CrowdSimValueError):
    pass


class MissingWeight(CrowdSimValueError):
    pass


class EmptyMatrix(CrowdSimValueError):
    pass


class EmptyInput(CrowdSimValueError):
    pass


class KeyMismatch(CrowdSimValueError):
    pass


class NoData(CrowdSimValueError):
    pass


class TooFewPoints(CrowdSimValueError):
    pass


class InvalidConfig(CrowdSimValueError):
    pass


class InvalidSpec(CrowdSimValueError):
    pass


class ExportError(CrowdSimError):
    """
    結果ファイルの書き出しに失敗した (元の OSError を __cause__ に持つ)
    """
