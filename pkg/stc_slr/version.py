import os


def get_version():
    """
    Get the version of the package from the bundled version.txt.

    Returns:
        str: The version string.
    """
    version_file_path = os.path.join(os.path.dirname(__file__), "version.txt")

    with open(version_file_path, "r") as file:
        version = file.read().strip()

    return version


def major_version(version: str) -> int:
    """Leading integer of a dotted version; 0 when there is none ("", "dev")."""
    head = version.split(".", 1)[0]
    return int(head) if head.isdigit() else 0


def is_compatible(written_by: str, running: str) -> bool:
    """Checkpoints stay readable within a major version."""
    return major_version(written_by) == major_version(running)


__version__ = get_version()
