from unittest.mock import mock_open, patch

import pytest

from stc_slr.version import get_version, is_compatible, major_version


class TestGetVersion:
    @patch("builtins.open", new_callable=mock_open, read_data="0.3.1\n")
    def test_get_version_happy_path(self, mock_file):
        assert get_version() == "0.3.1"
        assert mock_file.call_args.args[0].endswith("version.txt")

    @patch("builtins.open", side_effect=FileNotFoundError)
    def test_get_version_file_missing(self, mock_file):
        with pytest.raises(FileNotFoundError):
            get_version()

    @patch("builtins.open", new_callable=mock_open, read_data="   ")
    def test_get_version_empty_or_whitespace_file(self, mock_file):
        """
        A blank version file yields an empty string.
        """
        assert get_version() == ""


class TestCompatibility:
    @pytest.mark.parametrize("version,major", [("0.1.0", 0), ("2.10.3", 2), ("", 0), ("dev", 0), ("3", 3)])
    def test_major_version(self, version, major):
        assert major_version(version) == major

    def test_is_compatible(self):
        assert is_compatible("0.1.0", "0.4.2")
        assert not is_compatible("1.0.0", "0.4.2")
