import logging
import os
import sys

import coloredlogs

gettrace = getattr(sys, 'gettrace', None)

PROGRAM_NAME = "implant_mamba"

coloredlogs.DEFAULT_FIELD_STYLES = {'asctime': {'color': 'green'}, 'hostname': {'color': 'magenta'},
                                    'levelname': {'color': 'green', 'bold': True},
                                    'name': {'color': 'blue'}, 'programname': {'color': 'cyan'},
                                    'threadName': {'color': 'yellow'}}


def _env_on(name):
    return os.getenv(name) in ("1", "on", "true")


def is_debug():
    """ DEBUG 开关: 环境变量或调试器
    :return: True when numerical debug checks should run
    """
    return _env_on("DEBUG") or bool(gettrace and gettrace())


def worker_count(default=None):
    """ IMPLANTMAMBA_THREADS caps the worker pool and the numba thread count """
    value = os.getenv("IMPLANTMAMBA_THREADS")
    cpus = os.cpu_count() or 1
    if value:
        try:
            return max(1, min(int(value), cpus))
        except ValueError:
            pass
    return default or cpus


class Log:
    __instances = {}

    def __init__(self, level=None):
        self.level = level

    @classmethod
    def getLogger(cls, name=os.path.abspath(__name__)):
        if name not in cls.__instances:
            logger = logging.getLogger(name)
            fmt = '%(asctime)s [%(levelname)s] [%(name)s] %(filename)s[line:%(lineno)d] %(message)s'
            coloredlogs.install(fmt=fmt, level=Log.__getLogLevel(), logger=logger, stream=sys.stderr)
            logger.setLevel(Log.__getLogLevel())
            logger.propagate = False
            cls.__instances[name] = logger
        return cls.__instances[name]

    @staticmethod  # 设置日志等级
    def __getLogLevel():
        if _env_on("DEBUG"):
            return logging.DEBUG
        if _env_on("ERROR"):
            return logging.ERROR
        if gettrace and gettrace():
            return logging.DEBUG
        else:
            return logging.INFO
