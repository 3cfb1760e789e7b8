"""subdial: curate emotion/intent-labeled dialogue datasets from subtitles."""

__version__ = "0.1.0"
