"""
Library settings

``Config`` holds every tunable of the package as nested attributes (``Config.bootstrap.level``).
The defaults are registered at import; a YAML file loaded with ``load_config_from_file`` overrides
them section by section, and upper-case names read the environment.
"""

import os
from typing import Any, Union

import yaml

AnyBasic = Union[int, float, bool, str, list, dict, tuple, None]


class ConfigError(AttributeError):
    """A missing setting or a config file that cannot be used"""


class ConfigValue:
    """A section of settings; nested sections are ConfigValues themselves"""

    def set_values(self, data: dict[str, AnyBasic]) -> None:
        """Merge a mapping into this section; mappings merge into existing subsections"""
        for attr, value in data.items():
            if isinstance(value, dict):
                config_value = self.__dict__.get(attr)
                if not isinstance(config_value, ConfigValue):
                    config_value = ConfigValue()
                config_value.set_values(value)
                setattr(self, attr, config_value)
            else:
                setattr(self, attr, value)

    def create_config(self, name: str, *, default: AnyBasic = None, **values: AnyBasic) -> "ConfigValue":
        """
        Register a setting, or a section of settings given as keywords.

        Args:
            name (str): The setting or section name
            default: The value of a plain setting; exclusive with the keywords
            values: The settings of a section

        Returns:
            ConfigValue: This section, for chaining
        """
        if default is not None and values:
            raise ConfigError("You cannot set the default value AND default values for sub values")
        if values:
            self.set_values({name: values})
        else:
            self.set_values({name: default})

        return self

    def load_config_from_file(self, filename: str) -> None:
        """Overlay the values of a local YAML file on top of the current ones"""
        with open(filename, "r", encoding="utf-8") as stream:
            raw_data = yaml.safe_load(stream) or {}
        if not isinstance(raw_data, dict):
            raise ConfigError(f"The config file {filename} must contain a mapping at the top level")
        self.set_values(raw_data)

    def to_dict(self) -> dict[str, AnyBasic]:
        """The nested values as plain dicts"""
        data = {}
        for attr, value in sorted(vars(self).items()):
            if attr.startswith("_"):
                continue
            data[attr] = value.to_dict() if isinstance(value, ConfigValue) else value
        return data

    def __getattr__(self, item: str) -> Any:
        if item.startswith("__"):
            raise AttributeError(item)
        if item.isupper():
            return os.getenv(item)
        raise ConfigError(f"No such config value for {item}. And there is no default value for it")


Config = ConfigValue()


def set_defaults(config: ConfigValue = Config) -> None:
    """Register the library defaults. Values loaded from a file override them."""
    config.create_config(
        "learners",
        irls_max_iter=100,
        irls_tol=1e-8,
        ridge=1e-10,
        bandwidth=None,
    )
    config.create_config(
        "estimation",
        probability_floor=1e-6,
        crossfit_folds=5,
        outcome_model="separate",
        outcome_type="auto",
        extreme_weight=0.1,
        trim=False,
    )
    config.create_config("interventions", delta_max=5.0)
    config.create_config(
        "bootstrap",
        replications=1000,
        level=0.95,
        ci_method="percentile",
        max_drop_fraction=0.05,
    )
    config.create_config("oracle", draws=1_000_000, block_size=65536, quadrature_nodes=48)
    config.create_config(
        "iv",
        residual_bandwidth=None,
        k_bandwidth=None,
        mle_max_iter=2000,
        rho_boundary=0.999,
        on_support_violation="error",
        density="normal",
    )
    config.create_config(
        "data",
        rhc_url="https://hbiostat.org/data/repo/rhc.csv",
        rhc_sha256=None,
        rhc_rows=5735,
        timeout=60,
    )


def reset_config(config: ConfigValue = Config) -> None:
    """Drop every loaded value and restore the library defaults"""
    for attr in list(vars(config).keys()):
        if not attr.startswith("_"):
            delattr(config, attr)
    set_defaults(config)


set_defaults()
