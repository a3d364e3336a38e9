"""unilearn: one content store served to desktop and mobile learners through a device-adapting gateway."""

__version__ = "0.1.0"
