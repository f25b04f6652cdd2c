"""Software twin of a building sensor telemetry chain.

Battery-powered nodes buffer template/delta compressed readings and report
them over framed TCP to a spooling gateway, which forwards flat files to a
historian that applies exception and swinging-door compression.
"""

__version__ = "0.1.0"
