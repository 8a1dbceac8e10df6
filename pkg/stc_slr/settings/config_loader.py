from os.path import abspath, dirname, exists, join

from dynaconf import Dynaconf


SETTINGS_FILES = [
    "configuration.toml",
]


class SingletonSettings:
    _instance = None

    def __new__(cls, *args, **kwargs):
        if not cls._instance:
            cls._instance = super(SingletonSettings, cls).__new__(cls, *args, **kwargs)
        return cls._instance

    def __init__(self):
        """
        Load the packaged settings files once per process.

        Raises:
            FileNotFoundError: If any of the packaged settings files is missing.
        """
        if not hasattr(self, "settings"):
            base_dir = dirname(abspath(__file__))
            settings_files = [join(base_dir, f) for f in SETTINGS_FILES]

            for file_path in settings_files:
                if not exists(file_path):
                    raise FileNotFoundError(f"Settings file not found: {file_path}")

            self.settings = Dynaconf(envvar_prefix=False, merge_enabled=True, settings_files=settings_files)


def get_settings() -> Dynaconf:
    return SingletonSettings().settings


def load_user_settings(path: str) -> dict:
    """
    Read a flat key/value run configuration file.

    Keys come back lower-cased; Dynaconf upper-cases them internally.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    if not exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    user = Dynaconf(envvar_prefix="STC_RUN", settings_files=[abspath(path)])
    return {str(k).lower(): v for k, v in user.as_dict().items()}
