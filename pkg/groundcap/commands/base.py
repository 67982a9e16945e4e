import os

from setuptools import Command

from groundcap.util.config import resolve_settings


class EngineCommand(Command):
    """ Common plumbing for groundcap commands: a --config settings file,
        a --verbose flag and layered settings built in finalize_options.

        Subclasses list their own options in `user_options` (after the
        shared ones) and name the attributes that feed the settings layers
        in `setting_options`.
    """
    command_name = None
    base_options = [
        ('config=', 'c', 'Flat key=value settings file'),
        ('verbose', 'v', 'Log debug output'),
    ]
    user_options = base_options
    setting_options = ()

    @property
    def description(self):
        return self.__doc__

    def initialize_options(self):
        self.config = ''
        self.verbose = False
        for name in self.setting_options:
            setattr(self, name, None)
        self.initialize_command()

    def initialize_command(self):
        pass

    def finalize_options(self):
        if self.config and not os.path.exists(self.config):
            raise ValueError('--config file {} does not exist.'.format(self.config))
        self.settings = resolve_settings(
            self.config, {name: getattr(self, name) for name in self.setting_options})
        self.finalize_command()

    def finalize_command(self):
        pass

    def require(self, *names):
        for name in names:
            if not getattr(self, name):
                raise ValueError('--{} cannot be empty.'.format(name.replace('_', '-')))

    def require_dir(self, name):
        self.require(name)
        if not os.path.isdir(getattr(self, name)):
            raise ValueError('--{} {} is not a directory.'
                             .format(name.replace('_', '-'), getattr(self, name)))
