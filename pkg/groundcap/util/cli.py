import logging
import sys
from argparse import ArgumentParser, SUPPRESS
from setuptools.dist import Distribution

log = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Exit codes by exception type; anything else propagates.
EXIT_CODES = (
    (FloatingPointError, 3),
    (ValueError, 2),
    (OSError, 2),
    (KeyError, 2),
)


def make_command(CommandClass):
    dist = Distribution()
    cmd = CommandClass(dist)

    for long_opt, short_opt, help_text in cmd.user_options:
        if long_opt.endswith('='):
            action = 'store'
            default = None
        else:
            action = 'store_true'
            default = False
        long_opt = '--{}'.format(long_opt.rstrip('='))

        if short_opt:
            short_opt = '-{}'.format(short_opt)

        opts = filter(None, [short_opt, long_opt])
        yield (opts, help_text, action, default)


def make_cli(command_classes, argv=None):
    parser = ArgumentParser(prog='groundcap')
    subparsers = parser.add_subparsers()
    for cls in command_classes:
        subparser = subparsers.add_parser(cls.command_name, help=(cls.__doc__ or '').split('\n')[0])
        subparser.add_argument('--cls', help=SUPPRESS, default=cls)
        for opts, help_text, action, default in make_command(cls):
            subparser.add_argument(*opts, help=help_text, action=action,
                                   default=default)
    args = parser.parse_args(argv)
    if not args.__dict__:
        parser.print_help()
        sys.exit(2)
    return args.__dict__


def configure_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format=LOG_FORMAT, stream=sys.stderr)


def run_cmd(argv=None):
    """ Runs one subcommand and returns its exit code:
        0 on success, 2 on a validation error, 3 on a numerical failure.
    """
    from groundcap import COMMANDS

    args = make_cli(COMMANDS, argv)
    configure_logging(args.get('verbose'))
    dist = Distribution()
    cls = args.pop('cls')
    cmd = cls(dist)

    try:
        cmd.initialize_options()
        for key, value in args.items():
            if value:
                setattr(cmd, key, value)
        cmd.finalize_options()
        cmd.run()
    except tuple(error for error, _ in EXIT_CODES) as e:
        code = next(code for error, code in EXIT_CODES if isinstance(e, error))
        log.debug('%s failed.', cls.command_name, exc_info=True)
        message = 'missing field {}'.format(e) if isinstance(e, KeyError) else e
        print('{}: {}'.format(cls.command_name, message), file=sys.stderr)
        return code
    return 0
