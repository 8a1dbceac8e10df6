import logging
import os

from typing import Mapping, Optional

from stc_slr.settings.config_loader import get_settings


LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class CustomLogger:

    @classmethod
    def get_logger(
        cls,
        name: str,
        generate_log_files: bool = True,
        file_level: int = logging.INFO,
        console_level: int = logging.INFO,
        log_dir: Optional[str] = None,
    ) -> logging.Logger:
        """
        Return the named logger, wiring a console handler and optionally a log file.

        Parameters:
            name (str): The name of the logger.
            generate_log_files (bool): Whether to write the log file next to the console output.
            file_level (int): Level of the file handler.
            console_level (int): Level of the console handler.
            log_dir (Optional[str]): Directory for the log file, created on demand. Defaults to the working directory.

        Returns:
            logging.Logger: The logger object.

        Note:
            Handlers are attached once per logger name. The file name comes from the `log_file_path`
            setting and the file is overwritten on each run.

        Example:
            logger = CustomLogger.get_logger(__name__, log_dir="runs/pretrain_2024-05-01_10-00-00")
            logger.info("epoch 3 step 12 " + CustomLogger.format_components({"total": 4.1812}))
        """
        logger = logging.getLogger(name)
        logger.setLevel(logging.DEBUG)

        if not logger.handlers:
            formatter = logging.Formatter(LOG_FORMAT)

            if generate_log_files:
                file_handler = logging.FileHandler(cls.log_file_path(log_dir), mode="w")
                file_handler.setLevel(file_level)
                file_handler.setFormatter(formatter)
                logger.addHandler(file_handler)

            stream_handler = logging.StreamHandler()
            stream_handler.setLevel(console_level)
            stream_handler.setFormatter(formatter)
            logger.addHandler(stream_handler)

            # Keep training chatter out of the root logger
            logger.propagate = False

        return logger

    @staticmethod
    def log_file_path(log_dir: Optional[str] = None) -> str:
        file_name = get_settings().get("default").get("log_file_path", "run.log")
        if log_dir is None:
            return file_name
        os.makedirs(log_dir, exist_ok=True)
        return os.path.join(log_dir, os.path.basename(file_name))

    @staticmethod
    def format_components(components: Mapping[str, Optional[float]], precision: int = 4) -> str:
        """`name=value` pairs in insertion order; disabled components (None) are skipped."""
        return " ".join(f"{k}={v:.{precision}f}" for k, v in components.items() if v is not None)
