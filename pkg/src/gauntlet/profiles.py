"""Synthetic device profiles: the identifier values subjects may leak.

Profiles are generated from a seed so a battery is reproducible, and the
advertising identifier can be rotated independently, which is what makes
it the one resettable identifier in scoring.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path

_APP_POOL = (
    "com.flashlight.super", "com.weather.radar", "com.game.jewelpop",
    "com.fitness.steps", "com.notes.quick", "com.scanner.qr",
    "com.music.streamline", "com.photo.collage", "com.keyboard.emoji",
    "com.battery.doctor", "com.vpn.shield", "com.browser.lite",
)


def _luhn_check_digit(digits: str) -> int:
    total = 0
    # IMEI check digit: double every second digit from the right.
    for i, ch in enumerate(reversed(digits)):
        d = int(ch)
        if i % 2 == 0:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return (10 - total % 10) % 10


@dataclass(frozen=True)
class DeviceProfile:
    adid: str           # advertising id, UUID form, resettable
    android_id: str     # 16 hex chars
    imei: str           # 15 digits, luhn-valid
    mac: str            # colon-separated lowercase
    latitude: float
    longitude: float
    app_list: tuple[str, ...]

    @classmethod
    def generate(cls, seed: int) -> "DeviceProfile":
        rnd = random.Random(seed)
        adid = "-".join(
            "".join(rnd.choices("0123456789abcdef", k=n)) for n in (8, 4, 4, 4, 12)
        )
        android_id = "".join(rnd.choices("0123456789abcdef", k=16))
        body = "35" + "".join(rnd.choices("0123456789", k=12))
        imei = body + str(_luhn_check_digit(body))
        mac = ":".join(f"{rnd.randrange(256):02x}" for _ in range(6))
        lat = round(rnd.uniform(-85, 85), 6)
        lon = round(rnd.uniform(-180, 180), 6)
        apps = tuple(sorted(rnd.sample(_APP_POOL, k=6)))
        return cls(adid, android_id, imei, mac, lat, lon, apps)

    def reset_adid(self, seed: int) -> "DeviceProfile":
        rnd = random.Random(seed)
        new = "-".join(
            "".join(rnd.choices("0123456789abcdef", k=n)) for n in (8, 4, 4, 4, 12)
        )
        return replace(self, adid=new)

    def to_json(self) -> dict:
        return {
            "adid": self.adid,
            "android_id": self.android_id,
            "imei": self.imei,
            "mac": self.mac,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "app_list": list(self.app_list),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DeviceProfile":
        return cls(
            adid=obj["adid"],
            android_id=obj["android_id"],
            imei=obj["imei"],
            mac=obj["mac"],
            latitude=obj["latitude"],
            longitude=obj["longitude"],
            app_list=tuple(obj["app_list"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DeviceProfile":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))
