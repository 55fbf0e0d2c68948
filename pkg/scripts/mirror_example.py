"""Mirroring: run once with --mode publish and any number of times with --mode listen.

    wrapify broker &
    python scripts/mirror_example.py --mode listen &
    python scripts/mirror_example.py --mode publish --msg hello
"""

import argparse
import json

from wrapify import MiddlewareCommunicator, register


class MirrorCls(MiddlewareCommunicator):
    @register("NativeObject", "$0", "MirrorCls", "/example/read_msg", carrier="tcp", should_wait="$blocking")
    def read_msg(self, mware, msg="", blocking=True):
        msg_ip = input("type message: ")
        obj = {"msg": msg, "msg_ip": msg_ip}
        return (obj,)


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--mode", choices=("publish", "listen", "disable"), default="publish")
    p.add_argument("--mware", default="tcp")
    p.add_argument("--msg", default="")
    p.add_argument("--count", type=int, default=1)
    args = p.parse_args()

    mirror = MirrorCls()
    mirror.activate_communication(mirror.read_msg, mode=args.mode)
    for _ in range(args.count):
        (obj,) = mirror.read_msg(args.mware, msg=args.msg)
        print(json.dumps(obj), flush=True)
    mirror.close()


if __name__ == "__main__":
    main()
