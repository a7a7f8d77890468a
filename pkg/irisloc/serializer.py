import struct
from typing import Union


class SerializationError(ValueError):
    pass


class BinarySerializer:
    def __init__(self, schema: dict):
        self.array = bytearray()
        self.schema = schema

    def serialize_num(self, value: int, n_bytes: int):
        orig_value = value
        if value < 0:
            raise SerializationError("Can't serialize negative numbers %d" % value)
        for i in range(n_bytes):
            self.array.append(value & 255)
            value //= 256
        if value != 0:
            raise SerializationError("Value %d has more than %d bytes" % (orig_value, n_bytes))

    def serialize_field(self, value, field_type: Union[str, list, dict, type]):
        try:
            if type(field_type) == str:
                if field_type[0] == 'u':
                    self.serialize_num(value, int(field_type[1:]) // 8)
                elif field_type == 'f64':
                    self.array += struct.pack('<d', float(value))
                elif field_type == 'string':
                    b = value.encode('utf8')
                    self.serialize_num(len(b), 4)
                    self.array += b
                else:
                    raise SerializationError("unknown field type %r" % field_type)
            elif type(field_type) == list:
                if len(field_type) != 1:
                    raise SerializationError("array schema %r must hold one element type" % (field_type,))
                if type(field_type[0]) == int:
                    if type(value) != bytes:
                        raise SerializationError("type(%s) = %s != bytes" % (value, type(value)))
                    if len(value) != field_type[0]:
                        raise SerializationError("len(%s) = %s != %s" % (value, len(value), field_type[0]))
                    self.array += bytearray(value)
                elif field_type[0] == 'f64':
                    values = [float(v) for v in value]
                    self.serialize_num(len(values), 4)
                    self.array += struct.pack('<%dd' % len(values), *values)
                else:
                    self.serialize_num(len(value), 4)
                    for el in value:
                        self.serialize_field(el, field_type[0])
            elif type(field_type) == dict:
                if field_type['kind'] != 'option':
                    raise SerializationError("unsupported field kind %r" % field_type['kind'])
                if value is None:
                    self.serialize_num(0, 1)
                else:
                    self.serialize_num(1, 1)
                    self.serialize_field(value, field_type['type'])
            elif type(field_type) == type:
                if type(value) != field_type:
                    raise SerializationError("%s != type(%s)" % (field_type, value))
                self.serialize_struct(value)
            else:
                raise SerializationError("unsupported schema entry %r" % (field_type,))
        except SerializationError:
            raise
        except (TypeError, ValueError, AttributeError, struct.error) as e:
            raise SerializationError("Failed to serialize %s as %s: %s" % (value, field_type, e))

    def serialize_struct(self, obj):
        struct_schema = self.schema[type(obj)]
        if struct_schema['kind'] == 'struct':
            for fieldName, fieldType in struct_schema['fields']:
                self.serialize_field(getattr(obj, fieldName), fieldType)
        elif struct_schema['kind'] == 'enum':
            name = getattr(obj, struct_schema['field'])
            for idx, (fieldName, fieldType) in enumerate(struct_schema['values']):
                if fieldName == name:
                    self.serialize_num(idx, 1)
                    self.serialize_field(getattr(obj, fieldName), fieldType)
                    break
            else:
                raise SerializationError("enum %s has no variant %r" % (type(obj).__name__, name))
        else:
            raise SerializationError("unknown struct kind %r" % struct_schema['kind'])

    def serialize(self, obj):
        self.serialize_struct(obj)
        return bytes(self.array)


class BinaryDeserializer:
    """Reads what BinarySerializer writes, building objects of the schema's classes."""

    def __init__(self, schema: dict, data: bytes):
        self.schema = schema
        self.data = memoryview(data)
        self.offset = 0

    def _take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise SerializationError("truncated input at byte %d (need %d more)" % (self.offset, n))
        chunk = bytes(self.data[self.offset:self.offset + n])
        self.offset += n
        return chunk

    def deserialize_num(self, n_bytes: int) -> int:
        return int.from_bytes(self._take(n_bytes), 'little')

    def deserialize_field(self, field_type):
        if type(field_type) == str:
            if field_type[0] == 'u':
                return self.deserialize_num(int(field_type[1:]) // 8)
            if field_type == 'f64':
                return struct.unpack('<d', self._take(8))[0]
            if field_type == 'string':
                n = self.deserialize_num(4)
                try:
                    return self._take(n).decode('utf8')
                except UnicodeDecodeError as e:
                    raise SerializationError("bad string: %s" % e)
            raise SerializationError("unknown field type %r" % field_type)
        if type(field_type) == list:
            if type(field_type[0]) == int:
                return self._take(field_type[0])
            n = self.deserialize_num(4)
            if field_type[0] == 'f64':
                return list(struct.unpack('<%dd' % n, self._take(8 * n)))
            return [self.deserialize_field(field_type[0]) for _ in range(n)]
        if type(field_type) == dict:
            flag = self.deserialize_num(1)
            if flag == 0:
                return None
            if flag != 1:
                raise SerializationError("bad option tag %d" % flag)
            return self.deserialize_field(field_type['type'])
        if type(field_type) == type:
            return self.deserialize_struct(field_type)
        raise SerializationError("unsupported schema entry %r" % (field_type,))

    def deserialize_struct(self, cls):
        struct_schema = self.schema[cls]
        obj = cls.__new__(cls)
        if struct_schema['kind'] == 'struct':
            for fieldName, fieldType in struct_schema['fields']:
                setattr(obj, fieldName, self.deserialize_field(fieldType))
        elif struct_schema['kind'] == 'enum':
            idx = self.deserialize_num(1)
            if idx >= len(struct_schema['values']):
                raise SerializationError("enum %s has no variant %d" % (cls.__name__, idx))
            fieldName, fieldType = struct_schema['values'][idx]
            setattr(obj, struct_schema['field'], fieldName)
            setattr(obj, fieldName, self.deserialize_field(fieldType))
        else:
            raise SerializationError("unknown struct kind %r" % struct_schema['kind'])
        return obj

    def deserialize(self, cls):
        obj = self.deserialize_struct(cls)
        if self.offset != len(self.data):
            raise SerializationError("%d trailing bytes" % (len(self.data) - self.offset))
        return obj
